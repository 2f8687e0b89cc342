//! Two-stage training on a synthetic corpus: prefix-conditioned SFT, then
//! the dependency-aware preference stage against the frozen stage-1
//! reference, with the metrics CSV printed at the end.

use trajalign::bench::{build_training_corpus, gen_synthetic, metrics_to_csv, train, CorpusSettings, TrainMethod, TrainSettings};
use trajalign::trajectory::TokenTable;

fn main() {
    let table = TokenTable::standard();
    let ds = gen_synthetic(3, 24, 0.5).unwrap();
    let corpus = build_training_corpus(
        &ds.questions,
        CorpusSettings { winners_per_q: 6, losers_per_q: 6, top_k: 3 },
        3,
        &table,
    )
    .unwrap();
    println!("corpus: {} ranked samples, {} items each", corpus.len(), corpus[0].len());

    let settings = TrainSettings { steps: 80, batch_size: 8, seed: 3, ..TrainSettings::default() };
    let output = train(TrainMethod::Dadpo, &corpus, &settings, &table).unwrap();

    let stage1: Vec<_> = output.metrics.iter().filter(|r| r.stage == 1).collect();
    let stage2: Vec<_> = output.metrics.iter().filter(|r| r.stage == 2).collect();
    println!(
        "stage 1 (prefix-conditioned SFT): loss {:.4} -> {:.4} over {} steps",
        stage1.first().unwrap().loss,
        stage1.last().unwrap().loss,
        stage1.len()
    );
    println!(
        "stage 2 (mixed dependency-aware objective): loss {:.4} -> {:.4} over {} steps",
        stage2.first().unwrap().loss,
        stage2.last().unwrap().loss,
        stage2.len()
    );
    println!(
        "final reward gap (ranked winners vs rejected): {:.4}",
        stage2.last().unwrap().reward_gap.unwrap()
    );

    println!("\nmetrics.csv tail:");
    let csv = metrics_to_csv(&output.metrics);
    let lines: Vec<&str> = csv.lines().collect();
    println!("{}", lines[0]);
    for line in lines.iter().rev().take(5).rev() {
        println!("{line}");
    }
}
