//! Synthetic benchmark generation: questions with ground-truth features, an
//! in-memory knowledge base, and the seeded winner/loser trajectory
//! synthesis behind ranked training samples.
//!
//! The corpus is built so that answer quality is a structural property:
//!
//! * knowledge questions are answerable only through their gold passage (the
//!   parametric answer table never contains them);
//! * a deterministic slice of the knowledge questions states its fact under
//!   an alias, so lexical retrieval cannot anchor it and grounded generation
//!   fails; these populate the mid score band;
//! * parametric questions are covered by the answer table at a fixed rate.
//!
//! Trajectory synthesis encodes per-agent quality in both the score prefix
//! and the step payloads (one content word and one quality word per step),
//! so dependency scores and trajectory text carry the same graded signal an
//! annotated corpus would.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::orchestrator::mock::{MockAgentOptions, MockKnowledgeBase, MockWorld};
use crate::orchestrator::AgentBackends;
use crate::preference::{
    build_ranked_sample, score_prefix, Complexity, Confidence, Label, PreferencePrefix, QuestionFeatures,
    RankedSample, ScoredTrajectory,
};
use crate::rng::{mix, SplitMix64};
use crate::trajectory::{AgentKind, TokenTable, Trajectory};

/// One benchmark item. `gold_doc_id` is present exactly when the question
/// needs external knowledge and always resolves in the emitted knowledge
/// base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub id: u64,
    pub text: String,
    pub features: QuestionFeatures,
    pub gold_answer: String,
    pub gold_doc_id: Option<u32>,
}

/// A generated benchmark: questions, knowledge base, the parametric answer
/// table, and reconstructed intents for complex questions.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub questions: Vec<SyntheticQuestion>,
    pub kb: MockKnowledgeBase,
    pub parametric: BTreeMap<String, String>,
    pub sub_questions: BTreeMap<String, Vec<String>>,
}

impl SyntheticDataset {
    /// Assemble the mock world the agent backends run against.
    pub fn world(&self) -> MockWorld {
        let mut world = MockWorld::default();
        for q in &self.questions {
            world.features.insert(q.text.clone(), q.features);
            world.gold.insert(q.text.clone(), q.gold_answer.clone());
        }
        world.parametric = self.parametric.clone();
        world.sub_questions = self.sub_questions.clone();
        world.kb = self.kb.clone();
        world
    }

    /// Mock backend set over this dataset.
    pub fn backends(&self, table: &TokenTable, options: MockAgentOptions) -> AgentBackends {
        crate::orchestrator::mock::mock_backends(Arc::new(self.world()), table, options)
    }

    pub fn question_by_id(&self, id: u64) -> Option<&SyntheticQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Write the dataset as four JSONL files under `dir`: `questions.jsonl`,
    /// `kb.jsonl`, `parametric.jsonl`, `sub_questions.jsonl`.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        let mut questions = String::new();
        for q in &self.questions {
            questions.push_str(&serde_json::to_string(q).expect("questions serialize"));
            questions.push('\n');
        }
        std::fs::write(dir.join("questions.jsonl"), questions)?;

        let mut kb = String::new();
        for (id, text) in self.kb.iter() {
            kb.push_str(&serde_json::to_string(&serde_json::json!({"id": id, "text": text})).expect("docs serialize"));
            kb.push('\n');
        }
        std::fs::write(dir.join("kb.jsonl"), kb)?;

        let mut parametric = String::new();
        for (question, answer) in &self.parametric {
            parametric.push_str(
                &serde_json::to_string(&serde_json::json!({"question": question, "answer": answer}))
                    .expect("entries serialize"),
            );
            parametric.push('\n');
        }
        std::fs::write(dir.join("parametric.jsonl"), parametric)?;

        let mut subs = String::new();
        for (question, sub_questions) in &self.sub_questions {
            subs.push_str(
                &serde_json::to_string(&serde_json::json!({"question": question, "sub_questions": sub_questions}))
                    .expect("entries serialize"),
            );
            subs.push('\n');
        }
        std::fs::write(dir.join("sub_questions.jsonl"), subs)?;
        Ok(())
    }

    /// Load a dataset written by [`Self::save`].
    pub fn load(dir: &std::path::Path) -> Result<SyntheticDataset, BenchError> {
        let read_lines = |name: &str| -> Result<Vec<serde_json::Value>, BenchError> {
            let text = std::fs::read_to_string(dir.join(name))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| BenchError::InvalidArg(format!("{name}: {e}"))))
                .collect()
        };
        let questions: Vec<SyntheticQuestion> = read_lines("questions.jsonl")?
            .into_iter()
            .map(|v| serde_json::from_value(v).map_err(|e| BenchError::InvalidArg(format!("questions.jsonl: {e}"))))
            .collect::<Result<_, _>>()?;
        let mut kb = MockKnowledgeBase::new();
        for v in read_lines("kb.jsonl")? {
            let id = v["id"].as_u64().ok_or_else(|| BenchError::InvalidArg("kb.jsonl: bad id".into()))? as u32;
            let text = v["text"].as_str().ok_or_else(|| BenchError::InvalidArg("kb.jsonl: bad text".into()))?;
            kb.insert(id, text);
        }
        let mut parametric = BTreeMap::new();
        for v in read_lines("parametric.jsonl")? {
            let q = v["question"].as_str().ok_or_else(|| BenchError::InvalidArg("parametric.jsonl: bad question".into()))?;
            let a = v["answer"].as_str().ok_or_else(|| BenchError::InvalidArg("parametric.jsonl: bad answer".into()))?;
            parametric.insert(q.to_owned(), a.to_owned());
        }
        let mut sub_questions = BTreeMap::new();
        for v in read_lines("sub_questions.jsonl")? {
            let q = v["question"].as_str().ok_or_else(|| BenchError::InvalidArg("sub_questions.jsonl: bad question".into()))?;
            let subs: Vec<String> = v["sub_questions"]
                .as_array()
                .ok_or_else(|| BenchError::InvalidArg("sub_questions.jsonl: bad list".into()))?
                .iter()
                .map(|s| s.as_str().map(str::to_owned))
                .collect::<Option<_>>()
                .ok_or_else(|| BenchError::InvalidArg("sub_questions.jsonl: bad entry".into()))?;
            sub_questions.insert(q.to_owned(), subs);
        }
        Ok(SyntheticDataset { questions, kb, parametric, sub_questions })
    }
}

const SYLLABLES: [&str; 20] = [
    "bel", "dor", "fen", "gal", "hul", "jor", "kan", "lom", "mir", "nev", "pol", "quar", "ris", "sab", "tor",
    "ul", "ven", "wex", "yor", "zam",
];

const FACT_KEYS: [&str; 6] = ["capital", "motto", "founder", "currency", "anthem", "emblem"];

/// Coined three-syllable proper noun, bijective in the index.
fn coined_entity(idx: u64) -> String {
    let (a, b, c) = ((idx / 400 % 20) as usize, (idx / 20 % 20) as usize, (idx % 20) as usize);
    capitalize(&format!("{}{}{}", SYLLABLES[a], SYLLABLES[b], SYLLABLES[c]))
}

/// Coined answer word from a disjoint morphological family (always ends in
/// "ia", which no entity does).
fn coined_answer(idx: u64) -> String {
    let (a, b) = ((idx / 20 % 20) as usize, (idx % 20) as usize);
    capitalize(&format!("{}{}ia", SYLLABLES[a], SYLLABLES[b]))
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Score bands over the knowledge-agent mean of a question's prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreBand {
    Low,
    Mid,
    High,
}

impl ScoreBand {
    pub const ALL: [ScoreBand; 3] = [ScoreBand::Low, ScoreBand::Mid, ScoreBand::High];

    pub fn of_knowledge_mean(mean: f64) -> ScoreBand {
        if mean < 1.5 {
            ScoreBand::Low
        } else if mean < 3.5 {
            ScoreBand::Mid
        } else {
            ScoreBand::High
        }
    }
}

impl std::fmt::Display for ScoreBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreBand::Low => "low",
            ScoreBand::Mid => "mid",
            ScoreBand::High => "high",
        })
    }
}

const BAND_SALT: u64 = 0x00b5_a17e_0000_0001;
const REACH_SALT: u64 = 0x00b5_a17e_0000_0002;
const PARAM_SALT: u64 = 0x00b5_a17e_0000_0003;
const SPLIT_SALT: u64 = 0x00b5_a17e_0000_0004;
const JITTER_SALT: u64 = 0x00b5_a17e_0000_0005;

/// Band assignment is a pure function of the question: parametric questions
/// are the low band; knowledge questions split evenly into mid and high by
/// id hash.
pub fn band_of(q: &SyntheticQuestion) -> ScoreBand {
    if !q.features.needs_external_knowledge {
        ScoreBand::Low
    } else if mix(q.id ^ BAND_SALT).is_multiple_of(2) {
        ScoreBand::Mid
    } else {
        ScoreBand::High
    }
}

/// Mid-band questions whose gold passage uses an alias (40%), making it
/// lexically unreachable.
fn mid_band_unreachable(id: u64) -> bool {
    mix(id ^ REACH_SALT) % 10 < 4
}

/// Parametric questions the generator "knows" without retrieval (40%).
fn parametric_known(id: u64) -> bool {
    mix(id ^ PARAM_SALT) % 10 < 4
}

/// Deterministic 80/20 train/eval split by question id hash.
pub fn is_eval_id(id: u64) -> bool {
    mix(id ^ SPLIT_SALT).is_multiple_of(5)
}

/// The banding prefix of a question: the rubric prefix with the knowledge
/// scores jittered inside the band the question belongs to. Pure in the
/// question, so evaluation grouping needs no extra state.
pub fn eval_prefix(q: &SyntheticQuestion) -> PreferencePrefix {
    let base = score_prefix(&q.features);
    let band = band_of(q);
    PreferencePrefix::from_fn(|agent| match agent {
        AgentKind::KnowledgeRetriever | AgentKind::KnowledgeFilter | AgentKind::KnowledgeLocator => {
            let jitter = (mix(q.id ^ JITTER_SALT ^ agent.index() as u64) % 2) as u8;
            match band {
                ScoreBand::Low => base.score(agent),
                ScoreBand::Mid => 2 + jitter,
                ScoreBand::High => 4 + jitter,
            }
        }
        other => base.score(other),
    })
    .expect("band prefixes are in range")
}

/// Generate `n` questions with exactly `round(n * knowledge_fraction)` of
/// them knowledge-requiring, plus the knowledge base and parametric table.
/// Fully determined by the seed.
pub fn gen_synthetic(seed: u64, n: usize, knowledge_fraction: f64) -> Result<SyntheticDataset, BenchError> {
    if n < 1 {
        return Err(BenchError::InvalidArg("need at least one question".into()));
    }
    if !(0.0..=1.0).contains(&knowledge_fraction) {
        return Err(BenchError::InvalidArg(format!("knowledge_fraction {knowledge_fraction} outside [0, 1]")));
    }
    let k_n = (n as f64 * knowledge_fraction).round() as usize;

    let mut rng = SplitMix64::new(seed ^ 0x5e_ed_ba_5e);
    let mut knowledge_flags = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    for &idx in order.iter().take(k_n) {
        knowledge_flags[idx] = true;
    }

    let mut questions = Vec::with_capacity(n);
    let mut kb = MockKnowledgeBase::new();
    let mut parametric = BTreeMap::new();
    let mut sub_questions = BTreeMap::new();
    let mut next_doc_id: u32 = 1;

    for (i, &needs_knowledge) in knowledge_flags.iter().enumerate() {
        let id = i as u64;
        let entity = coined_entity(id);
        let complexity = if rng.next_below(4) == 0 { Complexity::Complex } else { Complexity::Simple };
        let confidence = if rng.next_below(5) == 0 { Confidence::Low } else { Confidence::High };

        if needs_knowledge {
            let key = FACT_KEYS[rng.next_below(FACT_KEYS.len() as u64) as usize];
            let answer = coined_answer(id.wrapping_mul(31).wrapping_add(7));
            let text = match complexity {
                Complexity::Simple => format!("What is the {key} of {entity}?"),
                Complexity::Complex => {
                    format!("According to the old records of {entity}, what {key} do the archives name?")
                }
            };
            let q = SyntheticQuestion {
                id,
                text: text.clone(),
                features: QuestionFeatures {
                    needs_external_knowledge: true,
                    answer_confidence: confidence,
                    instruction_complexity: complexity,
                },
                gold_answer: answer.clone(),
                gold_doc_id: Some(next_doc_id),
            };
            // The fact passage: anchored to the entity unless this is an
            // unreachable mid-band item, which states it under an alias.
            let unreachable = band_of(&q) == ScoreBand::Mid && mid_band_unreachable(id);
            let passage = if unreachable {
                format!("The {key} of that realm is {answer}.")
            } else {
                format!("The {key} of {entity} is {answer}.")
            };
            kb.insert(next_doc_id, passage);
            next_doc_id += 1;
            if complexity == Complexity::Complex {
                sub_questions.insert(
                    text.clone(),
                    vec![format!("{key} of {entity}"), format!("records of {entity}")],
                );
            }
            questions.push(q);
        } else {
            let answer = coined_answer(id.wrapping_mul(17).wrapping_add(3));
            let text = match complexity {
                Complexity::Simple => format!("What is the customary greeting of {entity}?"),
                Complexity::Complex => {
                    format!("Thinking of common courtesies, what greeting does {entity} customarily use?")
                }
            };
            if parametric_known(id) {
                parametric.insert(text.clone(), answer.clone());
            }
            if complexity == Complexity::Complex {
                sub_questions.insert(text.clone(), vec![format!("greeting of {entity}"), entity.clone()]);
            }
            questions.push(SyntheticQuestion {
                id,
                text,
                features: QuestionFeatures {
                    needs_external_knowledge: false,
                    answer_confidence: confidence,
                    instruction_complexity: complexity,
                },
                gold_answer: answer,
                gold_doc_id: None,
            });
        }
    }

    Ok(SyntheticDataset { questions, kb, parametric, sub_questions })
}

/// Quality word for a grade in `0..=5`; appears in the step payload so the
/// trajectory text carries the same graded signal as the score prefix.
pub fn quality_word(grade: u8) -> &'static str {
    ["none", "poor", "weak", "fair", "good", "exact"][grade as usize]
}

/// The closed payload word pool of the synthesizer.
pub fn payload_words() -> Vec<&'static str> {
    vec![
        "intent", "docs", "keep", "span", "ans", "check", "right", "wrong", "none", "poor", "weak", "fair",
        "good", "exact",
    ]
}

#[derive(Debug, Clone, Copy)]
struct Grades {
    ir: u8,
    kr: u8,
    kf: u8,
    kl: u8,
    av: u8,
}

impl Grades {
    fn key(&self) -> u32 {
        u32::from_le_bytes([self.ir, self.kr, self.kf, self.kl]) ^ ((self.av as u32) << 24).rotate_left(3)
    }

    fn prefix(&self) -> PreferencePrefix {
        PreferencePrefix::new([self.ir, self.kr, self.kf, self.kl, 5, self.av]).expect("grades in range")
    }
}

fn band_grade(rng: &mut SplitMix64, high: bool) -> u8 {
    if high {
        4 + rng.next_below(2) as u8
    } else {
        rng.next_below(2) as u8
    }
}

fn winner_grades(rng: &mut SplitMix64, f: &QuestionFeatures) -> Grades {
    Grades {
        ir: band_grade(rng, f.instruction_complexity == Complexity::Complex),
        kr: if f.needs_external_knowledge { 2 + rng.next_below(4) as u8 } else { rng.next_below(2) as u8 },
        kf: if f.needs_external_knowledge { 2 + rng.next_below(4) as u8 } else { rng.next_below(2) as u8 },
        kl: if f.needs_external_knowledge { 2 + rng.next_below(4) as u8 } else { rng.next_below(2) as u8 },
        av: band_grade(rng, f.answer_confidence == Confidence::Low),
    }
}

fn step(agent: AgentKind, content: &str, grade: u8) -> (AgentKind, String) {
    (agent, format!("{content} {}", quality_word(grade)))
}

fn assemble(question: &str, steps: Vec<(AgentKind, String)>) -> Trajectory {
    let pairs: Vec<(AgentKind, &str)> = steps.iter().map(|(a, p)| (*a, p.as_str())).collect();
    Trajectory::single_round(question, &pairs)
}

/// A rubric-consistent winning trajectory: coherent agent set for the
/// question's features, correct answer, payload quality words mirroring the
/// jittered grades.
fn synthesize_winner(q: &SyntheticQuestion, grades: Grades, table: &TokenTable) -> ScoredTrajectory {
    use AgentKind::*;
    let mut steps = vec![step(IntentReconstructor, "intent", grades.ir)];
    if q.features.needs_external_knowledge {
        steps.push(step(KnowledgeRetriever, "docs", grades.kr));
        steps.push(step(KnowledgeFilter, "keep", grades.kf));
        steps.push(step(KnowledgeLocator, "span", grades.kl));
    }
    steps.push((ResponseGenerator, "ans right".to_owned()));
    steps.push(step(AnswerVerifier, "check", grades.av));
    ScoredTrajectory::new(assemble(&q.text, steps), grades.prefix(), Label::Win, table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LoserRecipe {
    /// Retriever fired without filter/locator (knowledge questions).
    Decoupled,
    /// Coherent structure, wrong answer.
    WrongAnswer,
    /// Knowledge needed but no knowledge block at all.
    MissingBlock,
    /// Knowledge block fired needlessly (parametric questions).
    Spurious,
}

fn synthesize_loser(
    q: &SyntheticQuestion,
    recipe: LoserRecipe,
    rng: &mut SplitMix64,
    table: &TokenTable,
) -> ScoredTrajectory {
    use AgentKind::*;
    let (steps, grades) = match recipe {
        LoserRecipe::Decoupled => {
            let grades = Grades {
                ir: rng.next_below(2) as u8,
                kr: 4 + rng.next_below(2) as u8,
                kf: rng.next_below(2) as u8,
                kl: rng.next_below(2) as u8,
                av: rng.next_below(2) as u8,
            };
            let steps = vec![
                step(IntentReconstructor, "intent", grades.ir),
                step(KnowledgeRetriever, "docs", grades.kr),
                (ResponseGenerator, "ans right".to_owned()),
                step(AnswerVerifier, "check", grades.av),
            ];
            (steps, grades)
        }
        LoserRecipe::WrongAnswer => {
            let grades = Grades {
                ir: rng.next_below(2) as u8,
                kr: if q.features.needs_external_knowledge { 1 + rng.next_below(3) as u8 } else { rng.next_below(2) as u8 },
                kf: if q.features.needs_external_knowledge { 1 + rng.next_below(3) as u8 } else { rng.next_below(2) as u8 },
                kl: if q.features.needs_external_knowledge { 1 + rng.next_below(3) as u8 } else { rng.next_below(2) as u8 },
                av: rng.next_below(2) as u8,
            };
            let mut steps = vec![step(IntentReconstructor, "intent", grades.ir)];
            if q.features.needs_external_knowledge {
                steps.push(step(KnowledgeRetriever, "docs", grades.kr));
                steps.push(step(KnowledgeFilter, "keep", grades.kf));
                steps.push(step(KnowledgeLocator, "span", grades.kl));
            }
            steps.push((ResponseGenerator, "ans wrong".to_owned()));
            steps.push(step(AnswerVerifier, "check", grades.av));
            (steps, grades)
        }
        LoserRecipe::MissingBlock => {
            let grades = Grades {
                ir: rng.next_below(2) as u8,
                kr: rng.next_below(2) as u8,
                kf: rng.next_below(2) as u8,
                kl: rng.next_below(2) as u8,
                av: rng.next_below(2) as u8,
            };
            let steps = vec![
                step(IntentReconstructor, "intent", grades.ir),
                (ResponseGenerator, "ans wrong".to_owned()),
                step(AnswerVerifier, "check", grades.av),
            ];
            (steps, grades)
        }
        LoserRecipe::Spurious => {
            let grades = Grades {
                ir: rng.next_below(2) as u8,
                kr: 2 + rng.next_below(3) as u8,
                kf: 2 + rng.next_below(3) as u8,
                kl: 2 + rng.next_below(3) as u8,
                av: rng.next_below(2) as u8,
            };
            let steps = vec![
                step(IntentReconstructor, "intent", grades.ir),
                step(KnowledgeRetriever, "docs", grades.kr),
                step(KnowledgeFilter, "keep", grades.kf),
                step(KnowledgeLocator, "span", grades.kl),
                (ResponseGenerator, "ans right".to_owned()),
                step(AnswerVerifier, "check", grades.av),
            ];
            (steps, grades)
        }
    };
    ScoredTrajectory::new(assemble(&q.text, steps), grades.prefix(), Label::Lose, table)
}

/// Per-question corpus knobs: `winners_per_q` (M) correct trajectories,
/// `losers_per_q` (N) corrupted ones, `top_k` (K) ranked winners.
#[derive(Debug, Clone, Copy)]
pub struct CorpusSettings {
    pub winners_per_q: usize,
    pub losers_per_q: usize,
    pub top_k: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings { winners_per_q: 10, losers_per_q: 10, top_k: 5 }
    }
}

/// Synthesize one ranked sample per question: M winners with jittered
/// grades, N losers mixing answer corruption and agent decoupling, ranked
/// by dependency score with the usual top-K demotion.
pub fn build_training_corpus(
    questions: &[SyntheticQuestion],
    settings: CorpusSettings,
    seed: u64,
    table: &TokenTable,
) -> Result<Vec<RankedSample>, BenchError> {
    if settings.winners_per_q < settings.top_k || settings.top_k == 0 {
        return Err(BenchError::InvalidArg(format!(
            "need winners_per_q >= top_k >= 1, got {} and {}",
            settings.winners_per_q, settings.top_k
        )));
    }
    let mut samples = Vec::with_capacity(questions.len());
    for q in questions {
        let mut rng = SplitMix64::new(seed ^ mix(q.id ^ 0xc0_ff_ee));
        let mut seen = std::collections::BTreeSet::new();
        let mut winners = Vec::with_capacity(settings.winners_per_q);
        while winners.len() < settings.winners_per_q {
            let grades = winner_grades(&mut rng, &q.features);
            if seen.insert(grades.key()) {
                winners.push(synthesize_winner(q, grades, table));
            }
        }
        let knowledge_recipes = [LoserRecipe::Decoupled, LoserRecipe::WrongAnswer, LoserRecipe::MissingBlock];
        let parametric_recipes = [LoserRecipe::Spurious, LoserRecipe::WrongAnswer];
        let losers: Vec<ScoredTrajectory> = (0..settings.losers_per_q)
            .map(|i| {
                let recipe = if q.features.needs_external_knowledge {
                    knowledge_recipes[i % knowledge_recipes.len()]
                } else {
                    parametric_recipes[i % parametric_recipes.len()]
                };
                synthesize_loser(q, recipe, &mut rng, table)
            })
            .collect();
        samples.push(build_ranked_sample(&q.text, winners, losers, settings.top_k)?);
    }
    Ok(samples)
}
