//! The tabular autoregressive policy: exact log-probabilities, analytic
//! gradients, sampling, and bit-exact checkpoints.

use trajalign::policy::{tokenize_trajectory, trajectory_vocab, ToyPolicy, EOS};
use trajalign::rng::SplitMix64;
use trajalign::trajectory::{AgentKind, TokenTable, Trajectory};

fn main() {
    let table = TokenTable::standard();
    let vocab = trajectory_vocab(&table, &["ans", "right", "wrong"]).unwrap();
    println!("vocabulary: {} tokens (specials + sentinels + words)", vocab.len());

    // Zero seed is the uniform-policy convention.
    let uniform = ToyPolicy::init(vocab.clone(), 4, 0).unwrap();
    let seq = vocab.encode(&["ans", "right", EOS]).unwrap();
    let lp = uniform.log_prob_ids("any question", &seq);
    println!(
        "uniform policy, length-3 sequence: log prob {:.6} (= -3 ln {} = {:.6})",
        lp.value,
        vocab.len(),
        -3.0 * (vocab.len() as f64).ln()
    );

    // A seeded policy is deterministic and differentiable in closed form.
    let policy = ToyPolicy::init(vocab.clone(), 4, 42).unwrap();
    let trajectory = Trajectory::single_round(
        "what is the answer?",
        &[(AgentKind::ResponseGenerator, "ans right"), (AgentKind::AnswerVerifier, "")],
    );
    let tokens = tokenize_trajectory(&trajectory, &table);
    println!("\ntrajectory tokens: {tokens:?}");
    let ids = vocab.encode(&tokens).unwrap();
    let lp = policy.log_prob_ids("what is the answer?", &ids);
    println!("log prob {:.6}; per-position sums match: {}", lp.value, {
        let s: f64 = lp.per_position.iter().sum();
        (s - lp.value).abs() < 1e-12
    });
    let grad = policy.log_prob_grad_ids("what is the answer?", &ids);
    println!("gradient max |entry| = {:.6} (unvisited rows stay exactly zero)", grad.max_abs());

    // Sampling terminates at EOS or the length cap, deterministically per seed.
    let mut rng = SplitMix64::new(7);
    let sampled = policy.sample("what is the answer?", &mut rng, 12);
    println!("\nsampled: {:?}", vocab.decode(&sampled));

    // Checkpoints round-trip bit-exactly.
    let dir = std::env::temp_dir().join("trajalign-example-policy");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("policy.txt");
    policy.save(&path).unwrap();
    let restored = ToyPolicy::load(&path).unwrap();
    println!("checkpoint round trip bit-exact: {}", restored == policy);
    std::fs::remove_dir_all(&dir).ok();
}
