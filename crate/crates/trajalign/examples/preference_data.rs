//! Preference data construction: rubric scoring, formatted prefixes,
//! dependency scores, top-K ranked samples, and the JSONL dataset form.

use trajalign::preference::{
    build_ranked_sample, emit_jsonl, format_prefix, load_jsonl, parse_prefix, score_prefix, Complexity,
    Confidence, Label, PreferencePrefix, QuestionFeatures, ScoredTrajectory,
};
use trajalign::trajectory::{AgentKind, TokenTable, Trajectory};

fn main() {
    let table = TokenTable::standard();

    // The rubric maps question features to per-agent utility scores.
    let features = QuestionFeatures {
        needs_external_knowledge: true,
        answer_confidence: Confidence::High,
        instruction_complexity: Complexity::Simple,
    };
    let prefix = score_prefix(&features);
    println!("rubric scores for a knowledge question:");
    for agent in AgentKind::ALL {
        println!("  {:<20} {}", agent.to_string(), prefix.score(agent));
    }

    // The formatted prefix is what training inputs are conditioned on.
    let formatted = format_prefix(&prefix);
    println!("\nformatted prefix: {formatted}");
    assert_eq!(parse_prefix(&formatted).unwrap(), prefix);
    println!("dependency score (sum): {}", prefix.dependency_score());

    // Rank winners by dependency score and demote the rest.
    let mk = |answer: &str, scores: [u8; 6], label| {
        let t = Trajectory::single_round("q", &[(AgentKind::ResponseGenerator, answer)]);
        ScoredTrajectory::new(t, PreferencePrefix::new(scores).unwrap(), label, &table)
    };
    let winners = vec![
        mk("ans right", [1, 5, 4, 4, 5, 1], Label::Win), // 20
        mk("ans fair", [1, 3, 3, 2, 5, 1], Label::Win),  // 15
        mk("ans good", [1, 4, 4, 4, 5, 1], Label::Win),  // 19
    ];
    let losers = vec![mk("ans wrong", [1, 0, 0, 0, 5, 0], Label::Lose)];
    let sample = build_ranked_sample("q", winners, losers, 2).unwrap();
    println!("\nranked sample (K = 2):");
    for (rank, item) in sample.ordered_winners.iter().enumerate() {
        println!("  winner #{}: dependency {} :: {:?}", rank + 1, item.dependency_score(), item.trajectory.final_answer());
    }
    println!("  rejected set: {} items (demoted winners + losers)", sample.rejected.len());

    // JSONL round trip.
    let dir = std::env::temp_dir().join("trajalign-example-prefs");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("records.jsonl");
    let records: Vec<ScoredTrajectory> = sample.items().cloned().collect();
    emit_jsonl(&records, &path).unwrap();
    let loaded = load_jsonl(&path, &table).unwrap();
    println!("\nJSONL round trip: wrote and reloaded {} records, equal: {}", loaded.len(), loaded == records);
    std::fs::remove_dir_all(&dir).ok();
}
