//! Command-line surface over the library. Every subcommand accepts
//! `--seed`, `--config`, and `--out`; exit codes are 0 on success, 1 on
//! validation failure, 2 on I/O error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use trajalign::bench::{
    self, compare_report, reports_from_csv, CorpusSettings, EvalSettings, SyntheticDataset, SyntheticQuestion,
    TrainMethod, TrainSettings,
};
use trajalign::config::KvConfig;
use trajalign::orchestrator::{account_tokens, run_inference, OrchestratorConfig};
use trajalign::policy::ToyPolicy;
use trajalign::preference::{emit_jsonl, group_into_samples, load_jsonl};
use trajalign::trajectory::{parse_trajectory, token_count, validate, AgentKind, TokenTable, Tokenizer};

#[derive(Parser)]
#[command(name = "trajalign", version, about = "Multi-agent trajectory alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Seed for anything randomized.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset into --out.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of questions (config key `n`).
        #[arg(long)]
        n: Option<usize>,
        /// Fraction needing external knowledge (config key `knowledge_fraction`).
        #[arg(long)]
        knowledge_fraction: Option<f64>,
    },
    /// Build ranked preference samples as JSONL records into --out.
    BuildPrefs {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        questions: PathBuf,
        /// Which split of the questions to use.
        #[arg(long, default_value = "all", value_parser = ["train", "eval", "all"])]
        split: String,
    },
    /// Train a policy on a preference JSONL file; writes policy.txt,
    /// reference.txt, and metrics.csv into --out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["sft", "dpo", "fdpo", "dadpo"])]
        method: String,
        /// Preference records (JSONL) from `build-prefs`.
        #[arg(long)]
        prefs: PathBuf,
    },
    /// Evaluate a trained policy; writes a one-row report CSV into --out.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Report row label.
        #[arg(long)]
        method_name: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        questions: PathBuf,
        /// Held-out preference records (JSONL).
        #[arg(long)]
        prefs: PathBuf,
    },
    /// Compare report CSVs; prints a table and writes merged CSV to --out.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Report CSV files from `eval`.
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
    },
    /// Run inference over every question in a dataset; writes transcripts.
    Orchestrate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        questions: PathBuf,
        /// Route everything through the knowledge branch.
        #[arg(long)]
        force_knowledge: bool,
    },
    /// Validate a trajectory file (records separated by `---` lines).
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Token accounting over a trajectory file.
    Tokens {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "whitespace", value_parser = ["whitespace", "char"])]
        tokenizer: String,
    },
}

enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<bench::BenchError> for CliError {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::Io(inner) => CliError::Io(inner.to_string()),
            bench::BenchError::Preference(trajalign::preference::PreferenceError::IoFailure(inner)) => {
                CliError::Io(inner.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<trajalign::preference::PreferenceError> for CliError {
    fn from(e: trajalign::preference::PreferenceError) -> Self {
        match e {
            trajalign::preference::PreferenceError::IoFailure(inner) => CliError::Io(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<trajalign::policy::PolicyError> for CliError {
    fn from(e: trajalign::policy::PolicyError) -> Self {
        match e {
            trajalign::policy::PolicyError::Io(m) => CliError::Io(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<trajalign::config::ConfigError> for CliError {
    fn from(e: trajalign::config::ConfigError) -> Self {
        match e {
            trajalign::config::ConfigError::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<trajalign::orchestrator::OrchestratorError> for CliError {
    fn from(e: trajalign::orchestrator::OrchestratorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is a
            // usage problem, reported as a validation failure.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn load_config(common: &Common) -> Result<KvConfig, CliError> {
    match &common.config {
        Some(path) => Ok(KvConfig::from_file(path)?),
        None => Ok(KvConfig::default()),
    }
}

fn require_out(common: &Common, what: &str) -> Result<PathBuf, CliError> {
    common
        .out
        .clone()
        .ok_or_else(|| CliError::Validation(format!("--out is required for {what}")))
}

fn corpus_settings(cfg: &KvConfig) -> Result<CorpusSettings, CliError> {
    let d = CorpusSettings::default();
    Ok(CorpusSettings {
        winners_per_q: cfg.usize_or("m_winners", d.winners_per_q)?,
        losers_per_q: cfg.usize_or("n_losers", d.losers_per_q)?,
        top_k: cfg.usize_or("top_k", d.top_k)?,
    })
}

fn read_trajectory_records(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim() == "---" {
            if !current.trim().is_empty() {
                records.push(current.trim_end_matches('\n').to_owned());
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        records.push(current.trim_end_matches('\n').to_owned());
    }
    Ok(records)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let table = TokenTable::standard();
    match cli.command {
        Command::Gen { common, n, knowledge_fraction } => {
            let cfg = load_config(&common)?;
            let out = require_out(&common, "gen")?;
            let n = match n {
                Some(n) => n,
                None => cfg.usize_or("n", 400)?,
            };
            let fraction = match knowledge_fraction {
                Some(f) => f,
                None => cfg.f64_or("knowledge_fraction", 0.5)?,
            };
            let ds = bench::gen_synthetic(common.seed, n, fraction)?;
            ds.save(&out)?;
            println!(
                "wrote {} questions ({} knowledge) and {} passages to {}",
                ds.questions.len(),
                ds.questions.iter().filter(|q| q.features.needs_external_knowledge).count(),
                ds.kb.len(),
                out.display()
            );
            Ok(())
        }
        Command::BuildPrefs { common, questions, split } => {
            let cfg = load_config(&common)?;
            let out = require_out(&common, "build-prefs")?;
            let settings = corpus_settings(&cfg)?;
            let ds = SyntheticDataset::load(&questions)?;
            let selected: Vec<SyntheticQuestion> = ds
                .questions
                .iter()
                .filter(|q| match split.as_str() {
                    "train" => !bench::is_eval_id(q.id),
                    "eval" => bench::is_eval_id(q.id),
                    _ => true,
                })
                .cloned()
                .collect();
            if selected.is_empty() {
                return Err(CliError::Validation(format!("split {split:?} selected no questions")));
            }
            let corpus = bench::build_training_corpus(&selected, settings, common.seed, &table)?;
            let records: Vec<_> = corpus.iter().flat_map(|s| s.items().cloned()).collect();
            emit_jsonl(&records, &out)?;
            println!("wrote {} records over {} questions to {}", records.len(), corpus.len(), out.display());
            Ok(())
        }
        Command::Train { common, method, prefs } => {
            let cfg = load_config(&common)?;
            let out = require_out(&common, "train")?;
            let method: TrainMethod = method.parse()?;
            let mut settings = TrainSettings::from_kv(&cfg)?;
            settings.seed = common.seed;
            let k = cfg.usize_or("top_k", CorpusSettings::default().top_k)?;
            let records = load_jsonl(&prefs, &table)?;
            let corpus = group_into_samples(records, k)?;
            let output = bench::train(method, &corpus, &settings, &table)?;
            std::fs::create_dir_all(&out)?;
            output.policy.save(out.join("policy.txt"))?;
            output.reference.save(out.join("reference.txt"))?;
            std::fs::write(out.join("metrics.csv"), bench::metrics_to_csv(&output.metrics))?;
            let final_loss = output.metrics.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained {method} over {} samples; final loss {final_loss}; artifacts in {}",
                corpus.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { common, method_name, policy, reference, questions, prefs } => {
            let cfg = load_config(&common)?;
            let out = require_out(&common, "eval")?;
            let policy = ToyPolicy::load(&policy)?;
            let reference = ToyPolicy::load(&reference)?;
            let ds = SyntheticDataset::load(&questions)?;
            let k = cfg.usize_or("top_k", CorpusSettings::default().top_k)?;
            let records = load_jsonl(&prefs, &table)?;
            let samples = group_into_samples(records, k)?;
            let eval_questions: Vec<&SyntheticQuestion> = ds
                .questions
                .iter()
                .filter(|q| samples.iter().any(|s| s.question == q.text))
                .collect();
            let settings = EvalSettings {
                beta: cfg.f64_or("beta", 0.1)?,
                seed: common.seed,
                tokenizer: Tokenizer::Whitespace,
                orchestrator: OrchestratorConfig::from_kv(&cfg)?,
                force_knowledge: cfg.bool_or("force_knowledge", false)?,
            };
            let report =
                bench::evaluate(&method_name, &policy, &reference, &ds, &eval_questions, &samples, &settings, &table)?;
            let mut csv = String::from(bench::report::CSV_HEADER);
            csv.push('\n');
            csv.push_str(&bench::report::report_to_csv_row(&report));
            csv.push('\n');
            std::fs::write(&out, csv)?;
            println!(
                "{}: ranking_accuracy {:.4}, answer_accuracy {:.4}, mean_tokens {:.2} -> {}",
                report.method, report.ranking_accuracy, report.answer_accuracy, report.mean_tokens, out.display()
            );
            Ok(())
        }
        Command::Compare { common, reports } => {
            let mut rows = Vec::new();
            for path in &reports {
                rows.extend(reports_from_csv(&std::fs::read_to_string(path)?)?);
            }
            let comparison = compare_report(&rows)?;
            print!("{}", comparison.table());
            println!("best: {}", comparison.best_method);
            if let Some(out) = &common.out {
                std::fs::write(out, comparison.to_csv())?;
            }
            Ok(())
        }
        Command::Orchestrate { common, questions, force_knowledge } => {
            let cfg = load_config(&common)?;
            let ds = SyntheticDataset::load(&questions)?;
            let orchestrator_cfg = OrchestratorConfig::from_kv(&cfg)?;
            let backends = ds.backends(
                &table,
                trajalign::orchestrator::mock::MockAgentOptions {
                    force_knowledge: force_knowledge || cfg.bool_or("force_knowledge", false)?,
                    top_k: orchestrator_cfg.top_k_retrieval,
                },
            );
            let mut transcripts = String::new();
            let mut correct = 0usize;
            let mut tokens = 0usize;
            for q in &ds.questions {
                let (answer, trace) = run_inference(&q.text, &backends, &orchestrator_cfg, &table)?;
                if answer.trim() == q.gold_answer.trim() {
                    correct += 1;
                }
                tokens += account_tokens(&trace, Tokenizer::Whitespace).total;
                transcripts.push_str(&format!("=== question {}\n{}", q.id, trace.transcript()));
            }
            let n = ds.questions.len().max(1);
            println!(
                "orchestrated {} questions: answer_accuracy {:.4}, mean_tokens {:.2}",
                ds.questions.len(),
                correct as f64 / n as f64,
                tokens as f64 / n as f64
            );
            if let Some(out) = &common.out {
                std::fs::write(out, transcripts)?;
                println!("transcripts written to {}", out.display());
            }
            Ok(())
        }
        Command::Validate { common, input } => {
            let _ = load_config(&common)?;
            let records = read_trajectory_records(&input)?;
            if records.is_empty() {
                return Err(CliError::Validation("no trajectories in input".into()));
            }
            let mut failures = 0usize;
            for (i, record) in records.iter().enumerate() {
                match parse_trajectory(record, &table).and_then(|t| validate(&t).map(|()| t)) {
                    Ok(t) => println!("record {}: ok ({} steps, {} rounds)", i + 1, t.steps.len(), t.rounds()),
                    Err(e) => {
                        println!("record {}: INVALID: {e}", i + 1);
                        failures += 1;
                    }
                }
            }
            if failures > 0 {
                return Err(CliError::Validation(format!("{failures} invalid trajectories")));
            }
            Ok(())
        }
        Command::Tokens { common, input, tokenizer } => {
            let _ = load_config(&common)?;
            let tokenizer = match tokenizer.as_str() {
                "char" => Tokenizer::Chars,
                _ => Tokenizer::Whitespace,
            };
            let records = read_trajectory_records(&input)?;
            if records.is_empty() {
                return Err(CliError::Validation("no trajectories in input".into()));
            }
            let mut totals = trajalign::trajectory::TokenCount::default();
            let mut csv = String::from("record,agent,tokens\n");
            for (i, record) in records.iter().enumerate() {
                let t = parse_trajectory(record, &table).map_err(|e| CliError::Validation(e.to_string()))?;
                let counts = token_count(&t, tokenizer);
                for agent in AgentKind::ALL {
                    csv.push_str(&format!("{},{},{}\n", i + 1, agent, counts.get(agent)));
                }
                csv.push_str(&format!("{},total,{}\n", i + 1, counts.total));
                totals.merge(&counts);
            }
            println!("{:<16} {:>8}", "agent", "tokens");
            for agent in AgentKind::ALL {
                println!("{:<16} {:>8}", agent.to_string(), totals.get(agent));
            }
            println!("{:<16} {:>8}", "total", totals.total);
            if let Some(out) = &common.out {
                std::fs::write(out, csv)?;
            }
            Ok(())
        }
    }
}
