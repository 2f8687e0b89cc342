//! Deterministic in-process backends: a scripted backend for golden-path
//! tests and a functional mock agent set over an in-memory knowledge base.
//!
//! The mock knowledge base scores passages by lexical overlap with the
//! query, so retrieval reachability is a structural property of the corpus
//! rather than a network dependency.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{AgentBackend, AgentBackends, AgentRequest, AgentResponse, BackendError, RetrievedDoc};
use crate::orchestrator::{render_docs, strip_retry_markers};
use crate::preference::QuestionFeatures;
use crate::trajectory::{AgentKind, TokenTable};

/// In-memory id → passage map with deterministic lexical-overlap scoring.
#[derive(Debug, Clone, Default)]
pub struct MockKnowledgeBase {
    docs: BTreeMap<u32, String>,
}

impl MockKnowledgeBase {
    pub fn new() -> MockKnowledgeBase {
        MockKnowledgeBase::default()
    }

    pub fn insert(&mut self, id: u32, text: impl Into<String>) {
        self.docs.insert(id, text.into());
    }

    pub fn get(&self, id: u32) -> Option<&str> {
        self.docs.get(&id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.docs.iter().map(|(&id, text)| (id, text.as_str()))
    }

    /// Top-k passages by overlap count between lowercase query words and
    /// passage words; ties break toward the lower id.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievedDoc> {
        let query_words: Vec<String> = words_of(query);
        let mut scored: Vec<RetrievedDoc> = self
            .docs
            .iter()
            .map(|(&id, text)| {
                let doc_words = words_of(text);
                let overlap = query_words.iter().filter(|w| doc_words.contains(w)).count();
                RetrievedDoc { id, text: text.clone(), score: overlap as f64 }
            })
            .collect();
        scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.id.cmp(&b.id)));
        scored.truncate(k);
        scored
    }
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Replays a fixed list of responses in order; used to drive the
/// orchestrator down exact branches in tests.
pub struct ScriptedBackend {
    responses: Mutex<std::collections::VecDeque<AgentResponse>>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<AgentResponse>) -> ScriptedBackend {
        ScriptedBackend { responses: Mutex::new(responses.into()) }
    }

    /// Convenience constructor: `(payload, successor)` pairs for one agent,
    /// end and head tokens filled from the table.
    pub fn for_agent(
        agent: AgentKind,
        table: &TokenTable,
        script: Vec<(&str, Option<AgentKind>)>,
    ) -> ScriptedBackend {
        ScriptedBackend::new(
            script
                .into_iter()
                .map(|(payload, next)| AgentResponse {
                    payload: payload.to_owned(),
                    end_token: table.end(agent).to_owned(),
                    next_head_token: next.map(|a| table.head(a).to_owned()),
                })
                .collect(),
        )
    }
}

impl AgentBackend for ScriptedBackend {
    fn invoke(&self, _request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| BackendError("script exhausted".to_owned()))
    }
}

/// Filler words the filter and locator ignore when matching passages against
/// a question; what remains (entity names, fact keys) must anchor a passage
/// for it to count as on-topic.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "what", "is", "the", "of", "a", "an", "to", "do", "does", "according", "old", "records",
    "archives", "name", "thinking", "common", "courtesies", "greeting", "customary",
    "customarily", "use", "which", "who", "when", "did", "prior", "wrong", "answer",
];

/// Shared state for the functional mock agent set: per-question features and
/// gold answers, the knowledge base, and the partial parametric answer
/// table (what the generator "knows" without retrieval).
#[derive(Debug)]
pub struct MockWorld {
    pub features: BTreeMap<String, QuestionFeatures>,
    pub gold: BTreeMap<String, String>,
    pub parametric: BTreeMap<String, String>,
    pub kb: MockKnowledgeBase,
    /// Newline-separated reconstructed intents per question; defaults to the
    /// question itself.
    pub sub_questions: BTreeMap<String, Vec<String>>,
    /// Words with no anchoring power for the filter and locator.
    pub stopwords: std::collections::BTreeSet<String>,
}

impl Default for MockWorld {
    fn default() -> Self {
        MockWorld {
            features: BTreeMap::new(),
            gold: BTreeMap::new(),
            parametric: BTreeMap::new(),
            kb: MockKnowledgeBase::new(),
            sub_questions: BTreeMap::new(),
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

impl MockWorld {
    fn content_words(&self, text: &str) -> Vec<String> {
        words_of(text).into_iter().filter(|w| !self.stopwords.contains(w)).collect()
    }

    /// On-topic test: a passage must share at least two content words with
    /// the question (or all of them when the question has fewer than two).
    fn anchored(&self, question: &str, passage: &str) -> bool {
        let content = self.content_words(question);
        if content.is_empty() {
            return false;
        }
        let doc_words = words_of(passage);
        let overlap = content.iter().filter(|w| doc_words.contains(w)).count();
        overlap >= content.len().min(2)
    }
}

/// Answer emitted by the mock generator when it has no parametric knowledge
/// and no grounded span.
pub const UNKNOWN_ANSWER: &str = "unknown";

/// Options for the mock agent set.
#[derive(Debug, Clone)]
pub struct MockAgentOptions {
    /// Route every question down the knowledge branch regardless of its
    /// features (the forced-full-trajectory baseline).
    pub force_knowledge: bool,
    /// Documents retrieved per sub-question.
    pub top_k: usize,
}

impl Default for MockAgentOptions {
    fn default() -> Self {
        MockAgentOptions { force_knowledge: false, top_k: 3 }
    }
}

struct IrBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
    force_knowledge: bool,
}

impl AgentBackend for IrBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let base = strip_retry_markers(&request.question);
        let needs = self
            .world
            .features
            .get(base)
            .map(|f| f.needs_external_knowledge)
            .unwrap_or(false);
        let knowledge = needs || self.force_knowledge;
        let subs = self
            .world
            .sub_questions
            .get(base)
            .cloned()
            .unwrap_or_else(|| vec![base.to_owned()]);
        let next = if knowledge { AgentKind::KnowledgeRetriever } else { AgentKind::ResponseGenerator };
        Ok(AgentResponse {
            payload: subs.join("\n"),
            end_token: self.table.end(AgentKind::IntentReconstructor).to_owned(),
            next_head_token: Some(self.table.head(next).to_owned()),
        })
    }
}

struct KrBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
    top_k: usize,
}

impl AgentBackend for KrBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let docs = self.world.kb.search(&request.question, self.top_k);
        Ok(AgentResponse {
            payload: render_docs(&docs),
            end_token: self.table.end(AgentKind::KnowledgeRetriever).to_owned(),
            next_head_token: Some(self.table.head(AgentKind::KnowledgeFilter).to_owned()),
        })
    }
}

struct KfBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
}

impl AgentBackend for KfBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let docs = super::parse_docs(&request.state_text)?;
        let base = strip_retry_markers(&request.question);
        // Keep passages anchored to the question; the guard upstream handles
        // the all-filtered case.
        let kept: Vec<String> = docs
            .iter()
            .filter(|d| self.world.anchored(base, &d.text))
            .map(|d| d.id.to_string())
            .collect();
        Ok(AgentResponse {
            payload: kept.join(","),
            end_token: self.table.end(AgentKind::KnowledgeFilter).to_owned(),
            next_head_token: Some(self.table.head(AgentKind::KnowledgeLocator).to_owned()),
        })
    }
}

struct KlBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
    relevance_token: String,
}

impl AgentBackend for KlBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let docs = super::parse_docs(&request.state_text)?;
        let base = strip_retry_markers(&request.question);
        let lines: Vec<String> = docs
            .iter()
            .map(|d| {
                // A span is locatable when the passage is anchored to the
                // question's subject and carries an "is <answer>" clause.
                let span = d.text.split(" is ").nth(1).map(|tail| {
                    tail.trim_end_matches(|c: char| c == '.' || c.is_whitespace()).to_owned()
                });
                match span {
                    Some(span) if self.world.anchored(base, &d.text) => {
                        format!("{}\t{span}", self.relevance_token)
                    }
                    _ => "[Irrelevant]\t".to_owned(),
                }
            })
            .collect();
        Ok(AgentResponse {
            payload: lines.join("\n"),
            end_token: self.table.end(AgentKind::KnowledgeLocator).to_owned(),
            next_head_token: Some(self.table.head(AgentKind::ResponseGenerator).to_owned()),
        })
    }
}

struct RgBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
}

impl AgentBackend for RgBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let base = strip_retry_markers(&request.question);
        let grounded_spans: Vec<&str> = request.state_text.lines().filter(|l| !l.is_empty()).collect();
        // Grounded mode receives located spans in the state; the direct
        // branch passes reconstructed intents instead, which are not spans.
        let payload = if !request.state_text.is_empty() && self.world.features.get(base).is_some_and(|f| f.needs_external_knowledge) {
            grounded_spans.join(" and ")
        } else {
            self.world
                .parametric
                .get(base)
                .cloned()
                .unwrap_or_else(|| UNKNOWN_ANSWER.to_owned())
        };
        Ok(AgentResponse {
            payload,
            end_token: self.table.end(AgentKind::ResponseGenerator).to_owned(),
            next_head_token: Some(self.table.head(AgentKind::AnswerVerifier).to_owned()),
        })
    }
}

struct AvBackend {
    world: Arc<MockWorld>,
    table: TokenTable,
}

impl AgentBackend for AvBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let base = strip_retry_markers(&request.question);
        let verdict = match self.world.gold.get(base) {
            Some(gold) if gold.trim() == request.state_text.trim() => "Correct",
            _ => "wrong",
        };
        Ok(AgentResponse {
            payload: verdict.to_owned(),
            end_token: self.table.end(AgentKind::AnswerVerifier).to_owned(),
            next_head_token: None,
        })
    }
}

/// Assemble the functional mock agent set over a shared world.
pub fn mock_backends(world: Arc<MockWorld>, table: &TokenTable, options: MockAgentOptions) -> AgentBackends {
    let mut map: BTreeMap<AgentKind, Box<dyn AgentBackend + Send + Sync>> = BTreeMap::new();
    map.insert(
        AgentKind::IntentReconstructor,
        Box::new(IrBackend { world: world.clone(), table: table.clone(), force_knowledge: options.force_knowledge }),
    );
    map.insert(
        AgentKind::KnowledgeRetriever,
        Box::new(KrBackend { world: world.clone(), table: table.clone(), top_k: options.top_k }),
    );
    map.insert(AgentKind::KnowledgeFilter, Box::new(KfBackend { world: world.clone(), table: table.clone() }));
    map.insert(
        AgentKind::KnowledgeLocator,
        Box::new(KlBackend { world: world.clone(), table: table.clone(), relevance_token: "[Relevant]".to_owned() }),
    );
    map.insert(AgentKind::ResponseGenerator, Box::new(RgBackend { world: world.clone(), table: table.clone() }));
    map.insert(AgentKind::AnswerVerifier, Box::new(AvBackend { world, table: table.clone() }));
    AgentBackends::new(map).expect("all six agents are present")
}

/// Scripted backend set builder for exact-path tests: per-agent scripts,
/// missing agents default to an empty script (which fails on first use).
pub fn scripted_backends(
    table: &TokenTable,
    scripts: BTreeMap<AgentKind, Vec<(&str, Option<AgentKind>)>>,
) -> AgentBackends {
    let mut map: BTreeMap<AgentKind, Box<dyn AgentBackend + Send + Sync>> = BTreeMap::new();
    for agent in AgentKind::ALL {
        let script = scripts.get(&agent).cloned().unwrap_or_default();
        map.insert(agent, Box::new(ScriptedBackend::for_agent(agent, table, script)));
    }
    AgentBackends::new(map).expect("all six agents are present")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{account_tokens, run_inference, OrchestratorConfig};
    use crate::preference::{Complexity, Confidence};
    use crate::trajectory::Tokenizer;

    fn features(needs: bool) -> QuestionFeatures {
        QuestionFeatures {
            needs_external_knowledge: needs,
            answer_confidence: Confidence::High,
            instruction_complexity: Complexity::Simple,
        }
    }

    #[test]
    fn kb_search_ranks_by_overlap() {
        let mut kb = MockKnowledgeBase::new();
        kb.insert(1, "The capital of Velgor is Ompra.");
        kb.insert(2, "Weather report for the northern coast.");
        kb.insert(3, "Velgor has a long history.");
        let docs = kb.search("What is the capital of Velgor?", 2);
        assert_eq!(docs[0].id, 1);
        assert!(docs[0].score > docs[1].score);
    }

    #[test]
    fn mock_world_direct_branch() {
        let table = TokenTable::standard();
        let mut world = MockWorld::default();
        let q = "What is two plus two?";
        world.features.insert(q.into(), features(false));
        world.gold.insert(q.into(), "four".into());
        world.parametric.insert(q.into(), "four".into());
        let backends = mock_backends(Arc::new(world), &table, MockAgentOptions::default());
        let (answer, trace) = run_inference(q, &backends, &OrchestratorConfig::default(), &table).unwrap();
        assert_eq!(answer, "four");
        assert!(trace.verified);
        assert_eq!(trace.rounds.len(), 1);
        let agents: Vec<AgentKind> = trace.rounds[0].steps.iter().map(|s| s.agent).collect();
        assert_eq!(
            agents,
            vec![AgentKind::IntentReconstructor, AgentKind::ResponseGenerator, AgentKind::AnswerVerifier]
        );
        let counts = account_tokens(&trace, Tokenizer::Whitespace);
        assert_eq!(counts.get(AgentKind::KnowledgeRetriever), 0);
        assert_eq!(counts.total, counts.per_agent.iter().sum::<usize>());
    }

    #[test]
    fn mock_world_knowledge_branch_grounded() {
        let table = TokenTable::standard();
        let mut world = MockWorld::default();
        let q = "What is the capital of Velgor?";
        world.features.insert(q.into(), features(true));
        world.gold.insert(q.into(), "Ompra".into());
        world.kb.insert(1, "The capital of Velgor is Ompra.");
        world.kb.insert(2, "Rainfall statistics for Quarzam.");
        let backends = mock_backends(Arc::new(world), &table, MockAgentOptions::default());
        let (answer, trace) = run_inference(q, &backends, &OrchestratorConfig::default(), &table).unwrap();
        assert_eq!(answer, "Ompra");
        assert!(trace.verified);
        let agents: Vec<AgentKind> = trace.rounds[0].steps.iter().map(|s| s.agent).collect();
        assert_eq!(
            agents,
            vec![
                AgentKind::IntentReconstructor,
                AgentKind::KnowledgeRetriever,
                AgentKind::KnowledgeFilter,
                AgentKind::KnowledgeLocator,
                AgentKind::ResponseGenerator,
                AgentKind::AnswerVerifier,
            ]
        );
    }

    #[test]
    fn mock_world_unreachable_doc_falls_back_to_parametric() {
        let table = TokenTable::standard();
        let mut world = MockWorld::default();
        let q = "What is the capital of Velgor?";
        world.features.insert(q.into(), features(true));
        world.gold.insert(q.into(), "Ompra".into());
        // The passage states the fact about an alias, invisible to lexical search.
        world.kb.insert(1, "The seat of the old realm is Ompra.");
        world.kb.insert(2, "Quarzam exports grain.");
        let backends = mock_backends(Arc::new(world), &table, MockAgentOptions::default());
        let (answer, trace) = run_inference(q, &backends, &OrchestratorConfig::default(), &table).unwrap();
        assert_eq!(answer, UNKNOWN_ANSWER);
        assert!(!trace.verified);
        assert_eq!(trace.retries_used, 3);
    }
}
