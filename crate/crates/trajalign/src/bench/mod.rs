//! Synthetic benchmark: data generation, ranked-corpus synthesis, the
//! two-stage training driver, evaluation, and method comparison.

pub mod eval;
pub mod report;
pub mod synth;
pub mod train;

pub use eval::{evaluate, orchestrated_metrics, ranking_accuracy, BandStats, DependencyOracle, EvalReport, EvalSettings, PolicyReward, RewardModel};
pub use report::{compare_report, reports_from_csv, Comparison};
pub use synth::{
    band_of, build_training_corpus, eval_prefix, gen_synthetic, is_eval_id, payload_words, quality_word,
    CorpusSettings, ScoreBand, SyntheticDataset, SyntheticQuestion,
};
pub use train::{metrics_to_csv, train, MetricsRow, TrainMethod, TrainOutput, TrainSettings};

use thiserror::Error;

use crate::policy::{trajectory_vocab, tokenize_trajectory, Vocab};
use crate::preference::RankedSample;
use crate::trajectory::TokenTable;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("training diverged: loss became {0}")]
    Diverged(f64),
    #[error("bad csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Preference(#[from] crate::preference::PreferenceError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Orchestrator(#[from] crate::orchestrator::OrchestratorError),
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Vocabulary for a corpus: the synthesizer's closed pool extended with any
/// extra payload words the corpus carries, in deterministic order.
pub fn corpus_vocab(corpus: &[RankedSample], table: &TokenTable) -> Result<Vocab, BenchError> {
    let mut words: Vec<String> = payload_words().into_iter().map(str::to_owned).collect();
    let specials: std::collections::BTreeSet<&str> = table.literals().map(|(lit, _, _)| lit).collect();
    let known: std::collections::BTreeSet<String> = words.iter().cloned().collect();
    let mut extra: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for sample in corpus {
        for item in sample.items() {
            for token in tokenize_trajectory(&item.trajectory, table) {
                if !specials.contains(token.as_str())
                    && token != crate::policy::BOS
                    && token != crate::policy::EOS
                    && !known.contains(&token)
                {
                    extra.insert(token);
                }
            }
        }
    }
    words.extend(extra);
    let word_refs: Vec<&str> = words.iter().map(String::as_str).collect();
    Ok(trajectory_vocab(table, &word_refs)?)
}
