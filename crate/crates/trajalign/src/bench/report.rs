//! Method comparison: an aligned text table and a machine-readable CSV
//! carrying identical numbers. Rows are sorted by method name; the best row
//! by ranking accuracy (ties broken by name) is flagged.

use super::eval::{BandStats, EvalReport};
use super::synth::ScoreBand;
use super::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Reports sorted by method name.
    pub rows: Vec<EvalReport>,
    /// Method with the highest ranking accuracy (name breaks ties).
    pub best_method: String,
}

/// Build a comparison from at least two reports.
pub fn compare_report(reports: &[EvalReport]) -> Result<Comparison, BenchError> {
    if reports.len() < 2 {
        return Err(BenchError::InvalidArg(format!("need at least 2 reports, got {}", reports.len())));
    }
    let mut rows = reports.to_vec();
    rows.sort_by(|a, b| a.method.cmp(&b.method));
    let best_method = rows
        .iter()
        .max_by(|a, b| {
            a.ranking_accuracy
                .partial_cmp(&b.ranking_accuracy)
                .unwrap_or(std::cmp::Ordering::Equal)
                // On a tie the lexicographically smaller name wins, so take
                // the max of (accuracy, Reverse(name)).
                .then_with(|| b.method.cmp(&a.method))
        })
        .expect("nonempty")
        .method
        .clone();
    Ok(Comparison { rows, best_method })
}

impl Comparison {
    /// Aligned human-readable table; the best row is flagged with `*`.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>12} {:>12} {:>12} {:>9} {:>9} {:>9}\n",
            "method", "ranking_acc", "answer_acc", "mean_tokens", "low", "mid", "high"
        ));
        for row in &self.rows {
            let flag = if row.method == self.best_method { "*" } else { " " };
            out.push_str(&format!(
                "{flag}{:<9} {:>12.4} {:>12.4} {:>12.2} {:>9.4} {:>9.4} {:>9.4}\n",
                row.method,
                row.ranking_accuracy,
                row.answer_accuracy,
                row.mean_tokens,
                row.bands[0].accuracy,
                row.bands[1].accuracy,
                row.bands[2].accuracy,
            ));
        }
        out
    }

    /// CSV with full-precision numbers; [`reports_from_csv`] restores the
    /// exact in-memory reports.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&report_to_csv_row(row));
            out.push('\n');
        }
        out
    }
}

pub const CSV_HEADER: &str = "method,ranking_accuracy,answer_accuracy,mean_tokens,\
band_low_acc,band_low_n,band_mid_acc,band_mid_n,band_high_acc,band_high_n,samples,questions";

pub fn report_to_csv_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.method,
        r.ranking_accuracy,
        r.answer_accuracy,
        r.mean_tokens,
        r.bands[0].accuracy,
        r.bands[0].count,
        r.bands[1].accuracy,
        r.bands[1].count,
        r.bands[2].accuracy,
        r.bands[2].count,
        r.samples,
        r.questions
    )
}

/// Parse reports back from the CSV form.
pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>, BenchError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => return Err(BenchError::Csv(format!("bad header {other:?}"))),
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(BenchError::Csv(format!("line {}: expected 12 fields, got {}", idx + 2, fields.len())));
        }
        let f = |i: usize| -> Result<f64, BenchError> {
            fields[i].parse().map_err(|_| BenchError::Csv(format!("line {}: bad float {:?}", idx + 2, fields[i])))
        };
        let n = |i: usize| -> Result<usize, BenchError> {
            fields[i].parse().map_err(|_| BenchError::Csv(format!("line {}: bad count {:?}", idx + 2, fields[i])))
        };
        out.push(EvalReport {
            method: fields[0].to_owned(),
            ranking_accuracy: f(1)?,
            answer_accuracy: f(2)?,
            mean_tokens: f(3)?,
            bands: [
                BandStats { band: ScoreBand::Low, accuracy: f(4)?, count: n(5)? },
                BandStats { band: ScoreBand::Mid, accuracy: f(6)?, count: n(7)? },
                BandStats { band: ScoreBand::High, accuracy: f(8)?, count: n(9)? },
            ],
            samples: n(10)?,
            questions: n(11)?,
        });
    }
    Ok(out)
}
