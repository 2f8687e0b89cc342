//! Inference orchestration: the state machine that routes a question through
//! the six agents, with the filter and relevance safety guards, verifier
//! retries capped at a fixed budget, and full trace recording.
//!
//! One pass over the agents is a *round*. The intent reconstructor runs
//! first and decides between the direct-answer branch (generator, then
//! verifier) and the knowledge branch (per-sub-question retrieval, filtering,
//! locating, then grounded or parametric generationled by the relevance gate,
//! then the verifier). A `wrong` verdict appends the wrong answer to the
//! instruction and re-executes the whole dynamic trajectory from the start,
//! at most [`OrchestratorConfig::max_retries`] times; after that the last
//! answer is returned as the default.
//!
//! Backends are pluggable through [`AgentBackend`]: the deterministic mocks
//! in [`mock`] and the remote line-protocol client in [`remote`] implement
//! the same contract, so tests and live runs share this module verbatim.
//!
//! Structured payload conventions between the orchestrator and backends:
//! retrieved documents are rendered one per line as `id<TAB>score<TAB>text`
//! ([`render_docs`]/[`parse_docs`]), filter output is a comma-separated id
//! list, and locator output is one `tag<TAB>span` line per document.

pub mod mock;
pub mod remote;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::trajectory::{AgentKind, TokenCount, TokenTable, Tokenizer, Trajectory, TrajectoryStep};

/// Marker inserted between the original instruction and each wrong answer on
/// retry.
pub const RETRY_MARKER: &str = "[PRIOR WRONG ANSWER]: ";

/// Orchestration knobs. `max_retries` bounds verifier-triggered restarts
/// (three per the inference algorithm); `top_k_retrieval` is the per-sub-
/// question document budget; `sub_question_cap` bounds how many reconstructed
/// intents are retrieved for.
#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorConfig {
    pub max_retries: usize,
    pub top_k_retrieval: usize,
    pub relevance_token: String,
    pub sub_question_cap: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            max_retries: 3,
            top_k_retrieval: 3,
            relevance_token: "[Relevant]".to_owned(),
            sub_question_cap: 8,
        }
    }
}

impl OrchestratorConfig {
    pub fn from_kv(cfg: &KvConfig) -> Result<OrchestratorConfig, ConfigError> {
        let out = OrchestratorConfig {
            max_retries: cfg.usize_or("max_retries", 3)?,
            top_k_retrieval: cfg.usize_or("top_k_retrieval", 3)?,
            relevance_token: cfg.str_or("relevance_token", "[Relevant]"),
            sub_question_cap: cfg.usize_or("sub_question_cap", 8)?,
        };
        if out.max_retries < 1 {
            return Err(ConfigError::BadValue { key: "max_retries".into(), message: "must be at least 1".into() });
        }
        if out.top_k_retrieval < 1 {
            return Err(ConfigError::BadValue { key: "top_k_retrieval".into(), message: "must be at least 1".into() });
        }
        Ok(out)
    }
}

/// What the orchestrator hands a backend: the (possibly retry-augmented)
/// question, accumulated state text, and the head token being opened.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub agent: AgentKind,
    pub question: String,
    pub state_text: String,
    pub head_token: String,
}

/// What a backend returns: the step payload, the end token closing the step
/// (its agent must match the invoked agent), and the head token of the
/// proposed successor (None only for the verifier, which ends a round).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub payload: String,
    pub end_token: String,
    pub next_head_token: Option<String>,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// One agent implementation. Implementations must be deterministic under a
/// supplied seed where they are random at all; a backend shared across
/// concurrent runs must be stateless or internally synchronized.
pub trait AgentBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError>;
}

/// The full backend set; construction fails unless all six agents are
/// supplied.
pub struct AgentBackends {
    inner: BTreeMap<AgentKind, Box<dyn AgentBackend + Send + Sync>>,
}

impl AgentBackends {
    pub fn new(map: BTreeMap<AgentKind, Box<dyn AgentBackend + Send + Sync>>) -> Result<AgentBackends, OrchestratorError> {
        for agent in AgentKind::ALL {
            if !map.contains_key(&agent) {
                return Err(OrchestratorError::MissingBackend(agent));
            }
        }
        Ok(AgentBackends { inner: map })
    }

    fn get(&self, agent: AgentKind) -> &dyn AgentBackend {
        self.inner[&agent].as_ref()
    }
}

/// Legal successor agents in the transition graph. The verifier has no
/// successor entry: its verdict either halts the run or restarts at the
/// reconstructor.
pub fn legal_successors(agent: AgentKind) -> &'static [AgentKind] {
    use AgentKind::*;
    match agent {
        IntentReconstructor => &[ResponseGenerator, KnowledgeRetriever],
        KnowledgeRetriever => &[KnowledgeRetriever, KnowledgeFilter],
        KnowledgeFilter => &[KnowledgeLocator],
        KnowledgeLocator => &[ResponseGenerator],
        ResponseGenerator => &[AnswerVerifier],
        AnswerVerifier => &[IntentReconstructor],
    }
}

/// Branch decisions recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Direct,
    Knowledge,
    Grounded,
    Parametric,
    VerdictCorrect,
    VerdictWrong,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Branch::Direct => "direct",
            Branch::Knowledge => "knowledge",
            Branch::Grounded => "grounded",
            Branch::Parametric => "parametric",
            Branch::VerdictCorrect => "correct",
            Branch::VerdictWrong => "wrong",
        };
        f.write_str(s)
    }
}

/// One backend invocation as recorded in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub agent: AgentKind,
    pub payload: String,
    pub branch: Option<Branch>,
}

/// One round: the question in force (retry-augmented after round 0) and its
/// step records in invocation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub index: usize,
    pub question: String,
    pub steps: Vec<StepRecord>,
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct OrchestrationTrace {
    pub rounds: Vec<RoundTrace>,
    pub retries_used: usize,
    pub final_answer: String,
    pub verified: bool,
    pub backend_invocations: usize,
}

impl OrchestrationTrace {
    /// Flatten the trace into a grammar-level trajectory: consecutive
    /// records of the same agent within a round (the per-sub-question
    /// retriever invocations) merge into one step, payloads joined by
    /// newlines.
    pub fn to_trajectory(&self, original_question: &str) -> Trajectory {
        let mut steps: Vec<TrajectoryStep> = Vec::new();
        for round in &self.rounds {
            for record in &round.steps {
                match steps.last_mut() {
                    Some(last) if last.round == round.index && last.agent == record.agent => {
                        last.payload.push('\n');
                        last.payload.push_str(&record.payload);
                    }
                    _ => steps.push(TrajectoryStep {
                        agent: record.agent,
                        payload: record.payload.clone(),
                        round: round.index,
                    }),
                }
            }
        }
        Trajectory::new(original_question, steps)
    }

    /// Deterministic one-line-per-step rendering used by golden tests and
    /// the `orchestrate` subcommand. Newlines inside payloads are escaped.
    pub fn transcript(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('\n', "\\n");
        let mut out = String::new();
        for round in &self.rounds {
            out.push_str(&format!("round {}: question={}\n", round.index, esc(&round.question)));
            for record in &round.steps {
                match record.branch {
                    Some(b) => out.push_str(&format!("  {} [{}] {}\n", record.agent, b, esc(&record.payload))),
                    None => out.push_str(&format!("  {} {}\n", record.agent, esc(&record.payload))),
                }
            }
        }
        out.push_str(&format!("retries_used: {}\n", self.retries_used));
        out.push_str(&format!("verified: {}\n", self.verified));
        out.push_str(&format!("final_answer: {}\n", esc(&self.final_answer)));
        out
    }
}

/// A retrieved passage. Ids are unique within a retrieval batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedDoc {
    pub id: u32,
    pub text: String,
    pub score: f64,
}

/// Render docs one per line as `id<TAB>score<TAB>text`.
pub fn render_docs(docs: &[RetrievedDoc]) -> String {
    docs.iter()
        .map(|d| format!("{}\t{}\t{}", d.id, d.score, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`render_docs`].
pub fn parse_docs(text: &str) -> Result<Vec<RetrievedDoc>, BackendError> {
    let mut docs = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let id = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| BackendError(format!("bad doc line {line:?}")))?;
        let score = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| BackendError(format!("bad doc line {line:?}")))?;
        let text = parts.next().unwrap_or("").to_owned();
        docs.push(RetrievedDoc { id, text, score });
    }
    Ok(docs)
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no backend supplied for agent {0}")]
    MissingBackend(AgentKind),
    #[error("backend failure in {agent}: {cause}")]
    BackendFailure { agent: AgentKind, cause: String },
    #[error("illegal transition from {from} to {to:?}")]
    IllegalTransition { from: AgentKind, to: String },
    #[error("watchdog exceeded: {invocations} backend invocations over bound {bound}")]
    WatchdogExceeded { invocations: usize, bound: usize },
}

/// Drop filtered ids that were never retrieved; if nothing survives, keep
/// the single highest-scoring retrieved document (earliest position on
/// ties). The output is never empty and is always a subset of `retrieved`.
pub fn filter_guard(retrieved: &[RetrievedDoc], filtered_ids: &[u32]) -> Vec<RetrievedDoc> {
    debug_assert!(!retrieved.is_empty());
    let kept: Vec<RetrievedDoc> = retrieved.iter().filter(|d| filtered_ids.contains(&d.id)).cloned().collect();
    if !kept.is_empty() {
        return kept;
    }
    let mut best = 0usize;
    for (i, d) in retrieved.iter().enumerate() {
        if d.score > retrieved[best].score {
            best = i;
        }
    }
    vec![retrieved[best].clone()]
}

/// Generation mode selected by the locator's relevance tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationMode {
    /// Ground the generator on the relevance-tagged spans.
    Grounded(Vec<String>),
    /// No relevant span: the generator answers from the question alone.
    Parametric,
}

/// Grounded when any located span carries the relevance token, with exactly
/// those spans; parametric otherwise.
pub fn relevance_gate(located: &[(String, String)], relevance_token: &str) -> GenerationMode {
    let spans: Vec<String> = located
        .iter()
        .filter(|(tag, _)| tag == relevance_token)
        .map(|(_, span)| span.clone())
        .collect();
    if spans.is_empty() {
        GenerationMode::Parametric
    } else {
        GenerationMode::Grounded(spans)
    }
}

/// Concatenate the wrong answer onto the instruction with a fixed marker.
/// Each retry appends its own round's wrong answer.
pub fn retry_augment(question: &str, wrong_answer: &str) -> String {
    format!("{question}\n{RETRY_MARKER}{wrong_answer}")
}

/// The original instruction with any retry augmentation stripped.
pub fn strip_retry_markers(question: &str) -> &str {
    match question.find(&format!("\n{RETRY_MARKER}")) {
        Some(pos) => &question[..pos],
        None => question,
    }
}

/// Token accounting over a trace: every step record contributes its head and
/// end token plus its payload tokens; agents that never ran contribute zero.
pub fn account_tokens(trace: &OrchestrationTrace, tokenizer: Tokenizer) -> TokenCount {
    let mut counts = TokenCount::default();
    for round in &trace.rounds {
        for record in &round.steps {
            counts.add_step(record.agent, &record.payload, tokenizer);
        }
    }
    counts
}

struct RunState<'a> {
    backends: &'a AgentBackends,
    table: &'a TokenTable,
    invocations: usize,
    bound: usize,
}

impl<'a> RunState<'a> {
    fn invoke(
        &mut self,
        agent: AgentKind,
        question: &str,
        state_text: String,
    ) -> Result<AgentResponse, OrchestratorError> {
        self.invocations += 1;
        if self.invocations > self.bound {
            return Err(OrchestratorError::WatchdogExceeded { invocations: self.invocations, bound: self.bound });
        }
        let request = AgentRequest {
            agent,
            question: question.to_owned(),
            state_text,
            head_token: self.table.head(agent).to_owned(),
        };
        let response = self
            .backends
            .get(agent)
            .invoke(&request)
            .map_err(|e| OrchestratorError::BackendFailure { agent, cause: e.0 })?;
        if response.end_token != self.table.end(agent) {
            return Err(OrchestratorError::BackendFailure {
                agent,
                cause: format!("end token {:?} does not close a {agent} step", response.end_token),
            });
        }
        if let Some(next) = &response.next_head_token {
            let legal = legal_successors(agent)
                .iter()
                .any(|&succ| self.table.head(succ) == next.as_str());
            if !legal {
                return Err(OrchestratorError::IllegalTransition { from: agent, to: next.clone() });
            }
        }
        Ok(response)
    }
}

/// Execute the inference algorithm over the supplied backends. Returns the
/// answer and the complete trace. The answer is the verified generator
/// payload, or the last generator payload as the default once the retry
/// budget is exhausted.
pub fn run_inference(
    question: &str,
    backends: &AgentBackends,
    cfg: &OrchestratorConfig,
    table: &TokenTable,
) -> Result<(String, OrchestrationTrace), OrchestratorError> {
    use AgentKind::*;

    let bound = (cfg.max_retries + 1) * (6 + cfg.sub_question_cap);
    let mut state = RunState { backends, table, invocations: 0, bound };

    let mut rounds: Vec<RoundTrace> = Vec::new();
    let mut retries = 0usize;
    let mut current_question = question.to_owned();

    loop {
        let mut steps: Vec<StepRecord> = Vec::new();

        // The reconstructor opens every round and proposes the branch.
        let ir = state.invoke(IntentReconstructor, &current_question, String::new())?;
        let next = ir.next_head_token.clone().ok_or(OrchestratorError::IllegalTransition {
            from: IntentReconstructor,
            to: "<none>".to_owned(),
        })?;
        let branch = if next == table.head(ResponseGenerator) {
            Branch::Direct
        } else {
            Branch::Knowledge
        };
        let sub_questions: Vec<String> = ir
            .payload
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .take(cfg.sub_question_cap)
            .map(str::to_owned)
            .collect();
        let sub_questions = if sub_questions.is_empty() { vec![current_question.clone()] } else { sub_questions };
        steps.push(StepRecord { agent: IntentReconstructor, payload: ir.payload.clone(), branch: Some(branch) });

        let answer = match branch {
            Branch::Direct => {
                // The generator sees the question and the reconstructed
                // intents; a direct answer is parametric by definition.
                let rg = state.invoke(ResponseGenerator, &current_question, ir.payload.clone())?;
                expect_next(&rg, table, ResponseGenerator, AnswerVerifier)?;
                steps.push(StepRecord {
                    agent: ResponseGenerator,
                    payload: rg.payload.clone(),
                    branch: Some(Branch::Parametric),
                });
                rg.payload
            }
            _ => {
                // Knowledge branch: retrieve per sub-question.
                let mut retrieved: Vec<RetrievedDoc> = Vec::new();
                let mut kr_payloads: Vec<String> = Vec::new();
                for sub in &sub_questions {
                    let kr = state.invoke(KnowledgeRetriever, sub, current_question.clone())?;
                    let docs = parse_docs(&kr.payload)
                        .map_err(|e| OrchestratorError::BackendFailure { agent: KnowledgeRetriever, cause: e.0 })?;
                    for doc in docs {
                        if !retrieved.iter().any(|d| d.id == doc.id) {
                            retrieved.push(doc);
                        }
                    }
                    steps.push(StepRecord {
                        agent: KnowledgeRetriever,
                        payload: kr.payload.clone(),
                        branch: None,
                    });
                    kr_payloads.push(kr.payload);
                }
                if retrieved.is_empty() {
                    return Err(OrchestratorError::BackendFailure {
                        agent: KnowledgeRetriever,
                        cause: "retriever produced no documents".into(),
                    });
                }

                // Filter, with the guard against hallucinated or empty id sets.
                let kf = state.invoke(KnowledgeFilter, &current_question, render_docs(&retrieved))?;
                expect_next(&kf, table, KnowledgeFilter, KnowledgeLocator)?;
                let filtered_ids = parse_id_list(&kf.payload)
                    .map_err(|e| OrchestratorError::BackendFailure { agent: KnowledgeFilter, cause: e.0 })?;
                let kept = filter_guard(&retrieved, &filtered_ids);
                steps.push(StepRecord { agent: KnowledgeFilter, payload: kf.payload.clone(), branch: None });

                // Locate spans in the surviving documents.
                let kl = state.invoke(KnowledgeLocator, &current_question, render_docs(&kept))?;
                expect_next(&kl, table, KnowledgeLocator, ResponseGenerator)?;
                let located = parse_located(&kl.payload);
                steps.push(StepRecord { agent: KnowledgeLocator, payload: kl.payload.clone(), branch: None });

                // Relevance gate decides the generation mode.
                match relevance_gate(&located, &cfg.relevance_token) {
                    GenerationMode::Grounded(spans) => {
                        let rg = state.invoke(ResponseGenerator, &current_question, spans.join("\n"))?;
                        expect_next(&rg, table, ResponseGenerator, AnswerVerifier)?;
                        steps.push(StepRecord {
                            agent: ResponseGenerator,
                            payload: rg.payload.clone(),
                            branch: Some(Branch::Grounded),
                        });
                        rg.payload
                    }
                    GenerationMode::Parametric => {
                        let rg = state.invoke(ResponseGenerator, &current_question, String::new())?;
                        expect_next(&rg, table, ResponseGenerator, AnswerVerifier)?;
                        steps.push(StepRecord {
                            agent: ResponseGenerator,
                            payload: rg.payload.clone(),
                            branch: Some(Branch::Parametric),
                        });
                        rg.payload
                    }
                }
            }
        };

        // Verification; anything but "Correct" counts as wrong.
        let av = state.invoke(AnswerVerifier, &current_question, answer.clone())?;
        let correct = av.payload.trim().eq_ignore_ascii_case("correct");
        steps.push(StepRecord {
            agent: AnswerVerifier,
            payload: av.payload.clone(),
            branch: Some(if correct { Branch::VerdictCorrect } else { Branch::VerdictWrong }),
        });

        rounds.push(RoundTrace { index: rounds.len(), question: current_question.clone(), steps });

        if correct {
            let trace = OrchestrationTrace {
                rounds,
                retries_used: retries,
                final_answer: answer.clone(),
                verified: true,
                backend_invocations: state.invocations,
            };
            return Ok((answer, trace));
        }
        if retries == cfg.max_retries {
            let trace = OrchestrationTrace {
                rounds,
                retries_used: retries,
                final_answer: answer.clone(),
                verified: false,
                backend_invocations: state.invocations,
            };
            return Ok((answer, trace));
        }
        retries += 1;
        current_question = retry_augment(&current_question, &answer);
    }
}

fn expect_next(
    response: &AgentResponse,
    table: &TokenTable,
    from: AgentKind,
    expected: AgentKind,
) -> Result<(), OrchestratorError> {
    match &response.next_head_token {
        Some(next) if next == table.head(expected) => Ok(()),
        other => Err(OrchestratorError::IllegalTransition {
            from,
            to: other.clone().unwrap_or_else(|| "<none>".to_owned()),
        }),
    }
}

fn parse_id_list(text: &str) -> Result<Vec<u32>, BackendError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| BackendError(format!("bad id {part:?} in filter output")))
        })
        .collect()
}

fn parse_located(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| match line.split_once('\t') {
            Some((tag, span)) => (tag.to_owned(), span.to_owned()),
            None => (line.to_owned(), String::new()),
        })
        .collect()
}
