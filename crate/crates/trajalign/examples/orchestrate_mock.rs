//! Inference over the deterministic mock world: adaptive agent routing
//! against the forced-full-trajectory baseline, with answer accuracy and
//! token accounting per score band.

use trajalign::bench::{band_of, gen_synthetic, orchestrated_metrics, EvalSettings, SyntheticQuestion};
use trajalign::orchestrator::{account_tokens, run_inference, OrchestratorConfig};
use trajalign::trajectory::{TokenTable, Tokenizer};

fn main() {
    let table = TokenTable::standard();
    let ds = gen_synthetic(17, 120, 0.5).unwrap();
    println!(
        "dataset: {} questions, {} passages, {} parametric answers known",
        ds.questions.len(),
        ds.kb.len(),
        ds.parametric.len()
    );

    // One knowledge question end to end, with its trace.
    let q = ds.questions.iter().find(|q| q.features.needs_external_knowledge).unwrap();
    let backends = ds.backends(&table, Default::default());
    let (answer, trace) = run_inference(&q.text, &backends, &OrchestratorConfig::default(), &table).unwrap();
    println!("\nquestion: {}", q.text);
    println!("gold {:?}, answered {:?} (verified {})", q.gold_answer, answer, trace.verified);
    println!("tokens: {}", account_tokens(&trace, Tokenizer::Whitespace).total);
    println!("band: {}", band_of(q));
    print!("{}", trace.transcript());

    // Adaptive routing vs the forced-full baseline across the dataset.
    let refs: Vec<&SyntheticQuestion> = ds.questions.iter().collect();
    let adaptive = orchestrated_metrics(&ds, &refs, &EvalSettings::default(), &table).unwrap();
    let forced = orchestrated_metrics(
        &ds,
        &refs,
        &EvalSettings { force_knowledge: true, ..EvalSettings::default() },
        &table,
    )
    .unwrap();
    println!("\n{:<14} {:>10} {:>12}", "mode", "accuracy", "mean tokens");
    println!("{:<14} {:>10.4} {:>12.2}", "adaptive", adaptive.0, adaptive.1);
    println!("{:<14} {:>10.4} {:>12.2}", "forced-full", forced.0, forced.1);
    println!("token ratio (adaptive / forced): {:.3}", adaptive.1 / forced.1);

    println!("\nanswer accuracy by knowledge-score band (adaptive):");
    for stats in &adaptive.2 {
        println!("  {:<5} {:>8.4} over {} questions", stats.band.to_string(), stats.accuracy, stats.count);
    }
}
