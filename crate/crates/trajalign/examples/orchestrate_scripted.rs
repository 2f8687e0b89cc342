//! Drive the orchestrator down each control-flow branch with scripted
//! backends and print the exact transcripts: the direct-answer path, the
//! grounded and parametric knowledge paths, and the verifier retry path.

use std::collections::BTreeMap;

use trajalign::orchestrator::mock::scripted_backends;
use trajalign::orchestrator::{run_inference, OrchestratorConfig};
use trajalign::trajectory::{AgentKind, TokenTable};

use AgentKind::*;

fn main() {
    let table = TokenTable::standard();
    let cfg = OrchestratorConfig::default();

    // 1. Direct answer: the reconstructor routes straight to the generator.
    let mut scripts: BTreeMap<AgentKind, Vec<(&str, Option<AgentKind>)>> = BTreeMap::new();
    scripts.insert(IntentReconstructor, vec![("What is six times seven?", Some(ResponseGenerator))]);
    scripts.insert(ResponseGenerator, vec![("42", Some(AnswerVerifier))]);
    scripts.insert(AnswerVerifier, vec![("Correct", None)]);
    let backends = scripted_backends(&table, scripts);
    let (answer, trace) = run_inference("What is six times seven?", &backends, &cfg, &table).unwrap();
    println!("== direct answer (answer = {answer})");
    print!("{}", trace.transcript());

    // 2. Knowledge branch, grounded generation: two sub-questions, three
    // documents retrieved per sub-question, one relevant span.
    let mut scripts: BTreeMap<AgentKind, Vec<(&str, Option<AgentKind>)>> = BTreeMap::new();
    scripts.insert(IntentReconstructor, vec![("capital of Velgor\nhistory of Velgor", Some(KnowledgeRetriever))]);
    scripts.insert(
        KnowledgeRetriever,
        vec![
            ("1\t3\tThe capital of Velgor is Ompra.\n2\t1\tVelgor exports grain.", Some(KnowledgeFilter)),
            ("3\t2\tVelgor was founded long ago.\n2\t1\tVelgor exports grain.", Some(KnowledgeFilter)),
        ],
    );
    scripts.insert(KnowledgeFilter, vec![("1,3", Some(KnowledgeLocator))]);
    scripts.insert(KnowledgeLocator, vec![("[Relevant]\tOmpra\n[Irrelevant]\t", Some(ResponseGenerator))]);
    scripts.insert(ResponseGenerator, vec![("Ompra", Some(AnswerVerifier))]);
    scripts.insert(AnswerVerifier, vec![("Correct", None)]);
    let backends = scripted_backends(&table, scripts);
    let (answer, trace) = run_inference("What is the capital of Velgor?", &backends, &cfg, &table).unwrap();
    println!("== knowledge branch, grounded (answer = {answer})");
    print!("{}", trace.transcript());

    // 3. Knowledge branch, parametric fallback: nothing relevant located.
    let mut scripts: BTreeMap<AgentKind, Vec<(&str, Option<AgentKind>)>> = BTreeMap::new();
    scripts.insert(IntentReconstructor, vec![("motto of Quarzam", Some(KnowledgeRetriever))]);
    scripts.insert(KnowledgeRetriever, vec![("4\t1\tUnrelated passage.", Some(KnowledgeFilter))]);
    scripts.insert(KnowledgeFilter, vec![("", Some(KnowledgeLocator))]);
    scripts.insert(KnowledgeLocator, vec![("[Irrelevant]\t", Some(ResponseGenerator))]);
    scripts.insert(ResponseGenerator, vec![("Honor and grain", Some(AnswerVerifier))]);
    scripts.insert(AnswerVerifier, vec![("Correct", None)]);
    let backends = scripted_backends(&table, scripts);
    let (answer, trace) = run_inference("What is the motto of Quarzam?", &backends, &cfg, &table).unwrap();
    println!("== knowledge branch, parametric (answer = {answer})");
    print!("{}", trace.transcript());

    // 4. Retry path: two wrong verdicts, then a correct one.
    let mut scripts: BTreeMap<AgentKind, Vec<(&str, Option<AgentKind>)>> = BTreeMap::new();
    scripts.insert(
        IntentReconstructor,
        vec![
            ("Who wrote X?", Some(ResponseGenerator)),
            ("Who wrote X?", Some(ResponseGenerator)),
            ("Who wrote X?", Some(ResponseGenerator)),
        ],
    );
    scripts.insert(
        ResponseGenerator,
        vec![("Dickens", Some(AnswerVerifier)), ("Austen", Some(AnswerVerifier)), ("Tolstoy", Some(AnswerVerifier))],
    );
    scripts.insert(AnswerVerifier, vec![("wrong", None), ("wrong", None), ("Correct", None)]);
    let backends = scripted_backends(&table, scripts);
    let (answer, trace) = run_inference("Who wrote X?", &backends, &cfg, &table).unwrap();
    println!("== verifier retry path (answer = {answer})");
    print!("{}", trace.transcript());
}
