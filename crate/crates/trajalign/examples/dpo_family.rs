//! The preference loss family side by side: the pairwise loss, the
//! dependency-aware listwise loss and its full-order variant, zero-margin
//! closed forms, and the exact single-pair reduction.

use trajalign::losses::{dadpo_loss, dpo_loss, fdpo_loss, total_loss, v_beta, Beta, MixCoefficients};
use trajalign::policy::{tokenize_trajectory, trajectory_vocab, ToyPolicy};
use trajalign::preference::{build_ranked_sample, Label, PreferencePrefix, ScoredTrajectory};
use trajalign::trajectory::{AgentKind, TokenTable, Trajectory};

fn main() {
    let table = TokenTable::standard();
    let vocab = trajectory_vocab(&table, &["ans", "right", "wrong", "alpha", "beta", "gamma"]).unwrap();
    let policy = ToyPolicy::init(vocab.clone(), 2, 7).unwrap();
    let reference = ToyPolicy::init(vocab, 2, 8).unwrap();
    let beta = Beta::default();

    let mk = |answer: &str, scores: [u8; 6], label| {
        let t = Trajectory::single_round("q", &[(AgentKind::ResponseGenerator, answer)]);
        ScoredTrajectory::new(t, PreferencePrefix::new(scores).unwrap(), label, &table)
    };
    let encode = |item: &ScoredTrajectory| {
        policy.vocab().encode(&tokenize_trajectory(&item.trajectory, &table)).unwrap()
    };

    // Pairwise: zero margin gives exactly ln 2.
    let w = mk("ans right", [1, 5, 4, 4, 5, 1], Label::Win);
    let l = mk("ans wrong", [1, 0, 0, 0, 5, 0], Label::Lose);
    let zero_margin = dpo_loss(&policy, &policy, "q", &encode(&w), &encode(&l), beta).unwrap();
    println!("pairwise loss at zero margin: {:.12} (ln 2 = {:.12})", zero_margin.value, std::f64::consts::LN_2);

    // The margin term is antisymmetric.
    let vij = v_beta(&policy, &reference, "q", &encode(&w), &encode(&l), beta);
    let vji = v_beta(&policy, &reference, "q", &encode(&l), &encode(&w), beta);
    println!("margin antisymmetry: v(i,j) = {vij:.6}, v(j,i) = {vji:.6}");

    // Listwise over a ranked sample.
    let winners = vec![
        mk("ans right", [5, 5, 4, 4, 5, 5], Label::Win),
        mk("ans alpha", [1, 4, 4, 4, 5, 1], Label::Win),
        mk("ans beta", [1, 3, 2, 3, 5, 1], Label::Win),
        mk("ans gamma", [1, 2, 2, 2, 5, 0], Label::Win),
    ];
    let losers = vec![mk("ans wrong", [0, 0, 0, 0, 5, 0], Label::Lose), mk("wrong beta", [1, 1, 0, 0, 5, 0], Label::Lose)];
    let sample = build_ranked_sample("q", winners, losers, 2).unwrap();

    let listwise = dadpo_loss(&policy, &reference, &sample, beta, &table).unwrap();
    let full_order = fdpo_loss(&policy, &reference, &sample, beta, &table).unwrap();
    println!("\ndependency-aware listwise loss (K=2 over 6 items): {:.6}", listwise.value);
    println!("full-order baseline over all 6 items:              {:.6}", full_order.value);

    // Zero margin closed form: -Σ log σ(-ln(M+N-i)).
    let zm = dadpo_loss(&policy, &policy, &sample, beta, &table).unwrap();
    let closed: f64 = (1..=2).map(|i| (1.0 + (6 - i) as f64).ln()).sum();
    println!("zero-margin listwise value: {:.12} (closed form {closed:.12})", zm.value);

    // Single-pair reduction: with one winner and one loser the listwise loss
    // is the pairwise loss exactly.
    let pair_sample = build_ranked_sample(
        "q",
        vec![mk("ans right", [1, 5, 4, 4, 5, 1], Label::Win)],
        vec![mk("ans wrong", [1, 0, 0, 0, 5, 0], Label::Lose)],
        1,
    )
    .unwrap();
    let reduced = dadpo_loss(&policy, &reference, &pair_sample, beta, &table).unwrap();
    let pairwise = dpo_loss(
        &policy,
        &reference,
        "q",
        &encode(&pair_sample.ordered_winners[0]),
        &encode(&pair_sample.rejected[0]),
        beta,
    )
    .unwrap();
    println!(
        "\nsingle-pair reduction: listwise {:.15} vs pairwise {:.15} (diff {:.1e})",
        reduced.value,
        pairwise.value,
        (reduced.value - pairwise.value).abs()
    );

    // The combined objective mixes trajectory NLL with the listwise loss.
    let combined = total_loss(
        &policy,
        &reference,
        &sample.ordered_winners[0].trajectory,
        &sample,
        MixCoefficients::balanced(),
        beta,
        &table,
    )
    .unwrap();
    println!("combined objective (balanced coefficients): {:.6}", combined.value);
}
