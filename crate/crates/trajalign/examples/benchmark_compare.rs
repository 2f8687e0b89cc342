//! The whole benchmark in one run: generate data, synthesize a ranked
//! corpus, train each method, evaluate on the held-out split, and print the
//! comparison table.

use trajalign::bench::{
    build_training_corpus, compare_report, evaluate, gen_synthetic, is_eval_id, train, CorpusSettings,
    EvalSettings, SyntheticQuestion, TrainMethod, TrainSettings,
};
use trajalign::trajectory::TokenTable;

fn main() {
    let table = TokenTable::standard();
    let seed = 29;
    let ds = gen_synthetic(seed, 240, 0.5).unwrap();
    let train_qs: Vec<SyntheticQuestion> = ds.questions.iter().filter(|q| !is_eval_id(q.id)).cloned().collect();
    let eval_qs: Vec<SyntheticQuestion> = ds.questions.iter().filter(|q| is_eval_id(q.id)).cloned().collect();
    println!("{} train questions, {} eval questions", train_qs.len(), eval_qs.len());

    let corpus_settings = CorpusSettings::default();
    let train_corpus = build_training_corpus(&train_qs, corpus_settings, seed, &table).unwrap();
    let eval_corpus = build_training_corpus(&eval_qs, corpus_settings, seed ^ 0xff, &table).unwrap();

    let settings = TrainSettings { seed, ..TrainSettings::default() };
    let eval_settings = EvalSettings::default();
    let eval_refs: Vec<&SyntheticQuestion> = eval_qs.iter().collect();

    let mut reports = Vec::new();
    for method in [TrainMethod::Dpo, TrainMethod::Fdpo, TrainMethod::Dadpo] {
        let out = train(method, &train_corpus, &settings, &table).unwrap();
        let report = evaluate(
            method.name(),
            &out.policy,
            &out.reference,
            &ds,
            &eval_refs,
            &eval_corpus,
            &eval_settings,
            &table,
        )
        .unwrap();
        println!("{}: ranking accuracy {:.4}", method, report.ranking_accuracy);
        reports.push(report);
    }

    let comparison = compare_report(&reports).unwrap();
    println!("\n{}", comparison.table());
    println!("best method: {}", comparison.best_method);
}
