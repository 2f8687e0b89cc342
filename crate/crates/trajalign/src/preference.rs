//! Preference data construction: per-agent utility prefixes scored by a
//! deterministic rubric, dependency scores, and ranked samples for
//! dependency-aware preference training, with a JSONL dataset form.
//!
//! The JSONL schema is one record per line:
//!
//! ```json
//! {"label":"win","prefix_scores":{"Filter":4,...},"question":"...","trajectory_text":"..."}
//! ```
//!
//! `dependency_score` is always derived as the sum of the six prefix scores;
//! it is never read from a file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{parse_trajectory, serialize_trajectory, AgentKind, TokenTable, Trajectory};

/// Per-agent utility scores in `0..=5`. The generator always scores 5: it is
/// required on every trajectory, so its score is a fixed baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferencePrefix {
    scores: [u8; 6],
}

pub const MAX_SCORE: u8 = 5;

impl PreferencePrefix {
    /// Scores indexed in [`AgentKind::ALL`] order.
    pub fn new(scores: [u8; 6]) -> Result<PreferencePrefix, PreferenceError> {
        for (i, &s) in scores.iter().enumerate() {
            if s > MAX_SCORE {
                return Err(PreferenceError::InvalidScore {
                    agent: AgentKind::from_index(i).unwrap(),
                    score: s,
                });
            }
        }
        let rg = scores[AgentKind::ResponseGenerator.index()];
        if rg != MAX_SCORE {
            return Err(PreferenceError::InvalidScore { agent: AgentKind::ResponseGenerator, score: rg });
        }
        Ok(PreferencePrefix { scores })
    }

    pub fn from_fn(f: impl Fn(AgentKind) -> u8) -> Result<PreferencePrefix, PreferenceError> {
        PreferencePrefix::new(AgentKind::ALL.map(f))
    }

    pub fn score(&self, agent: AgentKind) -> u8 {
        self.scores[agent.index()]
    }

    /// Sum of the six scores. At least 5 because of the generator baseline.
    pub fn dependency_score(&self) -> u32 {
        self.scores.iter().map(|&s| s as u32).sum()
    }

    /// Mean score over the three knowledge agents (retriever, filter,
    /// locator); used for score-band grouping in evaluation.
    pub fn knowledge_mean(&self) -> f64 {
        let sum = self.score(AgentKind::KnowledgeRetriever) as f64
            + self.score(AgentKind::KnowledgeFilter) as f64
            + self.score(AgentKind::KnowledgeLocator) as f64;
        sum / 3.0
    }
}

/// Confidence the system has in answering without verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    High,
}

/// Structural complexity of the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Complex,
}

/// The rubric's three input conditions for a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFeatures {
    pub needs_external_knowledge: bool,
    pub answer_confidence: Confidence,
    pub instruction_complexity: Complexity,
}

/// Deterministic rubric scoring. Band membership follows the rubric
/// conditions; the exact value inside a band is fixed:
///
/// * knowledge agents score 5/4/4 (retriever/filter/locator) when external
///   knowledge is needed, else 0;
/// * the reconstructor scores 5 when the instruction is complex, else 1;
/// * the verifier scores 5 on low confidence; on high confidence it keeps a
///   nominal 1 when retrieved evidence is in play and 0 otherwise;
/// * the generator is always 5.
pub fn score_prefix(f: &QuestionFeatures) -> PreferencePrefix {
    let needs = f.needs_external_knowledge;
    PreferencePrefix::from_fn(|agent| match agent {
        AgentKind::IntentReconstructor => match f.instruction_complexity {
            Complexity::Complex => 5,
            Complexity::Simple => 1,
        },
        AgentKind::KnowledgeRetriever => {
            if needs {
                5
            } else {
                0
            }
        }
        AgentKind::KnowledgeFilter | AgentKind::KnowledgeLocator => {
            if needs {
                4
            } else {
                0
            }
        }
        AgentKind::ResponseGenerator => 5,
        AgentKind::AnswerVerifier => match f.answer_confidence {
            Confidence::Low => 5,
            Confidence::High => {
                if needs {
                    1
                } else {
                    0
                }
            }
        },
    })
    .expect("rubric scores are in range by construction")
}

/// Render the prefix as one `⟨Name: s⟩` tag per agent in table order.
pub fn format_prefix(p: &PreferencePrefix) -> String {
    let mut out = String::new();
    for agent in AgentKind::ALL {
        out.push_str(&format!("\u{27e8}{}: {}\u{27e9}", agent.name(), p.score(agent)));
    }
    out
}

/// Inverse of [`format_prefix`]: expects exactly six tags in table order.
pub fn parse_prefix(text: &str) -> Result<PreferencePrefix, PreferenceError> {
    let mut rest = text;
    let mut scores = [0u8; 6];
    for agent in AgentKind::ALL {
        let open = format!("\u{27e8}{}: ", agent.name());
        rest = rest
            .strip_prefix(&open)
            .ok_or_else(|| PreferenceError::PrefixParse(format!("expected tag for {agent}")))?;
        let close = rest
            .find('\u{27e9}')
            .ok_or_else(|| PreferenceError::PrefixParse(format!("unterminated tag for {agent}")))?;
        let digits = &rest[..close];
        let score: u8 = digits
            .parse()
            .map_err(|_| PreferenceError::PrefixParse(format!("bad score {digits:?} for {agent}")))?;
        scores[agent.index()] = score;
        rest = &rest['\u{27e9}'.len_utf8() + close..];
    }
    if !rest.is_empty() {
        return Err(PreferenceError::PrefixParse(format!("trailing text {rest:?}")));
    }
    PreferencePrefix::new(scores)
}

/// Win/lose label assigned by answer correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Win,
    Lose,
}

/// A trajectory annotated with its prefix, label, and derived dependency
/// score. The canonical serialized text is cached for stable ordering and
/// for the JSONL form.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub prefix: PreferencePrefix,
    pub label: Label,
    text: String,
    dependency_score: u32,
}

impl ScoredTrajectory {
    pub fn new(trajectory: Trajectory, prefix: PreferencePrefix, label: Label, table: &TokenTable) -> ScoredTrajectory {
        let text = serialize_trajectory(&trajectory, table);
        let dependency_score = prefix.dependency_score();
        ScoredTrajectory { trajectory, prefix, label, text, dependency_score }
    }

    pub fn dependency_score(&self) -> u32 {
        self.dependency_score
    }

    /// The canonical serialized trajectory text.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn question(&self) -> &str {
        &self.trajectory.question
    }

    fn rank_key(&self) -> (std::cmp::Reverse<u32>, &str) {
        (std::cmp::Reverse(self.dependency_score), self.text.as_str())
    }
}

/// One training record for dependency-aware preference learning: the top-K
/// winners in dependency order, and the rejected set (demoted winners plus
/// losers). The rejected set is mathematically unordered; it is stored in a
/// deterministic order for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    pub question: String,
    pub ordered_winners: Vec<ScoredTrajectory>,
    pub rejected: Vec<ScoredTrajectory>,
}

impl RankedSample {
    /// All items in the global index order used by the listwise losses:
    /// ordered winners first, then the rejected set.
    pub fn items(&self) -> impl Iterator<Item = &ScoredTrajectory> {
        self.ordered_winners.iter().chain(self.rejected.iter())
    }

    pub fn len(&self) -> usize {
        self.ordered_winners.len() + self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn top_k(&self) -> usize {
        self.ordered_winners.len()
    }
}

/// Select the top-`k` winners by dependency score (ties broken by serialized
/// text) and demote the rest into the rejected set together with the losers.
pub fn build_ranked_sample(
    question: &str,
    winners: Vec<ScoredTrajectory>,
    losers: Vec<ScoredTrajectory>,
    k: usize,
) -> Result<RankedSample, PreferenceError> {
    if k == 0 || winners.len() < k {
        return Err(PreferenceError::InsufficientWinners { winners: winners.len(), k });
    }
    for item in winners.iter().chain(losers.iter()) {
        if item.question() != question {
            return Err(PreferenceError::MixedQuestion {
                expected: question.to_owned(),
                found: item.question().to_owned(),
            });
        }
    }
    if let Some(w) = winners.iter().find(|w| w.label != Label::Win) {
        return Err(PreferenceError::WrongLabel { text: w.text().to_owned(), expected: Label::Win });
    }
    if let Some(l) = losers.iter().find(|l| l.label != Label::Lose) {
        return Err(PreferenceError::WrongLabel { text: l.text().to_owned(), expected: Label::Lose });
    }

    let mut winners = winners;
    winners.sort_by(|a, b| a.rank_key().cmp(&b.rank_key()));
    let demoted = winners.split_off(k);

    let mut losers = losers;
    losers.sort_by(|a, b| a.rank_key().cmp(&b.rank_key()));

    let mut rejected = demoted;
    rejected.extend(losers);

    Ok(RankedSample { question: question.to_owned(), ordered_winners: winners, rejected })
}

/// Group a flat record stream into ranked samples, one per question (in
/// first-appearance order), selecting top-`k` per question. This is the
/// inverse of flattening samples into the JSONL record form.
pub fn group_into_samples(records: Vec<ScoredTrajectory>, k: usize) -> Result<Vec<RankedSample>, PreferenceError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_question: BTreeMap<String, (Vec<ScoredTrajectory>, Vec<ScoredTrajectory>)> = BTreeMap::new();
    for record in records {
        let q = record.question().to_owned();
        if !by_question.contains_key(&q) {
            order.push(q.clone());
        }
        let entry = by_question.entry(q).or_default();
        match record.label {
            Label::Win => entry.0.push(record),
            Label::Lose => entry.1.push(record),
        }
    }
    order
        .into_iter()
        .map(|q| {
            let (winners, losers) = by_question.remove(&q).expect("grouped above");
            build_ranked_sample(&q, winners, losers, k)
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("invalid score {score} for agent {agent}")]
    InvalidScore { agent: AgentKind, score: u8 },
    #[error("cannot parse preference prefix: {0}")]
    PrefixParse(String),
    #[error("need at least k={k} winners, got {winners}")]
    InsufficientWinners { winners: usize, k: usize },
    #[error("sample mixes questions: expected {expected:?}, found {found:?}")]
    MixedQuestion { expected: String, found: String },
    #[error("trajectory {text:?} does not carry the expected {expected:?} label")]
    WrongLabel { text: String, expected: Label },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("line {line}: bad or missing field {field}: {message}")]
    SchemaViolation { line: usize, field: &'static str, message: String },
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    question: String,
    trajectory_text: String,
    prefix_scores: BTreeMap<String, u8>,
    label: Label,
}

/// Write records as JSONL, one per line, UTF-8.
pub fn emit_jsonl(records: &[ScoredTrajectory], path: impl AsRef<Path>) -> Result<(), PreferenceError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let rec = JsonlRecord {
            question: r.question().to_owned(),
            trajectory_text: r.text().to_owned(),
            prefix_scores: AgentKind::ALL.iter().map(|&a| (a.name().to_owned(), r.prefix.score(a))).collect(),
            label: r.label,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| PreferenceError::SchemaViolation {
            line: 0,
            field: "record",
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load records from JSONL, reporting schema problems with line numbers.
/// Dependency scores are recomputed from the prefix, never trusted.
pub fn load_jsonl(path: impl AsRef<Path>, table: &TokenTable) -> Result<Vec<ScoredTrajectory>, PreferenceError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_jsonl_line(&line, line_no, table)?);
    }
    Ok(records)
}

fn parse_jsonl_line(line: &str, line_no: usize, table: &TokenTable) -> Result<ScoredTrajectory, PreferenceError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| PreferenceError::SchemaViolation {
        line: line_no,
        field: "record",
        message: e.to_string(),
    })?;
    let field = |name: &'static str| -> Result<&serde_json::Value, PreferenceError> {
        value.get(name).ok_or(PreferenceError::SchemaViolation {
            line: line_no,
            field: name,
            message: "missing".into(),
        })
    };
    let question = field("question")?
        .as_str()
        .ok_or(PreferenceError::SchemaViolation { line: line_no, field: "question", message: "not a string".into() })?;
    let text = field("trajectory_text")?
        .as_str()
        .ok_or(PreferenceError::SchemaViolation { line: line_no, field: "trajectory_text", message: "not a string".into() })?;
    let label = match field("label")?.as_str() {
        Some("win") => Label::Win,
        Some("lose") => Label::Lose,
        other => {
            return Err(PreferenceError::SchemaViolation {
                line: line_no,
                field: "label",
                message: format!("expected \"win\" or \"lose\", got {other:?}"),
            })
        }
    };
    let scores_obj = field("prefix_scores")?
        .as_object()
        .ok_or(PreferenceError::SchemaViolation { line: line_no, field: "prefix_scores", message: "not an object".into() })?;
    let mut scores = [0u8; 6];
    for agent in AgentKind::ALL {
        let v = scores_obj.get(agent.name()).ok_or(PreferenceError::SchemaViolation {
            line: line_no,
            field: "prefix_scores",
            message: format!("missing agent {}", agent.name()),
        })?;
        let s = v.as_u64().filter(|&s| s <= MAX_SCORE as u64).ok_or(PreferenceError::SchemaViolation {
            line: line_no,
            field: "prefix_scores",
            message: format!("score for {} out of range", agent.name()),
        })?;
        scores[agent.index()] = s as u8;
    }
    let prefix = PreferencePrefix::new(scores).map_err(|e| PreferenceError::SchemaViolation {
        line: line_no,
        field: "prefix_scores",
        message: e.to_string(),
    })?;
    let trajectory = parse_trajectory(text, table).map_err(|e| PreferenceError::SchemaViolation {
        line: line_no,
        field: "trajectory_text",
        message: e.to_string(),
    })?;
    if trajectory.question != question {
        return Err(PreferenceError::SchemaViolation {
            line: line_no,
            field: "question",
            message: "question does not match the trajectory text".into(),
        });
    }
    Ok(ScoredTrajectory::new(trajectory, prefix, label, table))
}
