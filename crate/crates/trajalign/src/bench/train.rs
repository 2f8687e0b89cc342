//! Two-stage training driver. Stage 1 minimizes the prefix-conditioned SFT
//! loss over winning records; stage 2 freezes the stage-1 policy as the
//! reference and minimizes the selected preference objective (the
//! dependency-aware method mixes in the trajectory NLL with the configured
//! coefficients). Optimization is plain gradient descent with
//! halving-on-increase, so each accepted step never increases its own batch
//! loss, and the whole run is a deterministic function of (corpus, settings).

use super::BenchError;
use crate::config::KvConfig;
use crate::losses::{
    dadpo_loss_encoded, descent_step, sequence_nll, sequence_reward, Beta, ListwiseAggregation, LossError,
    LossValue, MixCoefficients,
};
use crate::policy::{tokenize_trajectory, TokenId, ToyPolicy};
use crate::preference::{format_prefix, Label, RankedSample};
use crate::rng::SplitMix64;
use crate::trajectory::TokenTable;

/// The four training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    Sft,
    Dpo,
    Fdpo,
    Dadpo,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 4] = [TrainMethod::Sft, TrainMethod::Dpo, TrainMethod::Fdpo, TrainMethod::Dadpo];

    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Sft => "sft",
            TrainMethod::Dpo => "dpo",
            TrainMethod::Fdpo => "fdpo",
            TrainMethod::Dadpo => "dadpo",
        }
    }
}

impl std::str::FromStr for TrainMethod {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<TrainMethod, BenchError> {
        match s {
            "sft" => Ok(TrainMethod::Sft),
            "dpo" => Ok(TrainMethod::Dpo),
            "fdpo" => Ok(TrainMethod::Fdpo),
            "dadpo" => Ok(TrainMethod::Dadpo),
            other => Err(BenchError::InvalidArg(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Training hyperparameters; the key-value config keys carry the same names.
/// `batch_size == 0` means full batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub step_size: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub contexts: usize,
    pub inter_mean: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            beta: 0.1,
            alpha1: 0.5,
            alpha2: 0.5,
            step_size: 1.0,
            steps: 300,
            batch_size: 8,
            seed: 1,
            contexts: 4,
            inter_mean: false,
        }
    }
}

impl TrainSettings {
    pub fn from_kv(cfg: &KvConfig) -> Result<TrainSettings, BenchError> {
        let d = TrainSettings::default();
        Ok(TrainSettings {
            beta: cfg.f64_or("beta", d.beta)?,
            alpha1: cfg.f64_or("alpha1", d.alpha1)?,
            alpha2: cfg.f64_or("alpha2", d.alpha2)?,
            step_size: cfg.f64_or("step_size", d.step_size)?,
            steps: cfg.usize_or("steps", d.steps)?,
            batch_size: cfg.usize_or("batch_size", d.batch_size)?,
            seed: cfg.u64_or("seed", d.seed)?,
            contexts: cfg.usize_or("contexts", d.contexts)?,
            inter_mean: cfg.bool_or("inter_mean", d.inter_mean)?,
        })
    }

    fn beta_typed(&self) -> Result<Beta, BenchError> {
        Ok(Beta::new(self.beta)?)
    }

    fn coeffs(&self) -> Result<MixCoefficients, BenchError> {
        Ok(MixCoefficients::new(self.alpha1, self.alpha2)?)
    }

    fn aggregation(&self) -> ListwiseAggregation {
        if self.inter_mean {
            ListwiseAggregation::Mean
        } else {
            ListwiseAggregation::Sum
        }
    }
}

/// One metrics CSV row. Stage 1 rows carry only the loss; stage 2 rows add
/// the component values (for the mixed objective) and the mean reward gap
/// between ranked winners and the rejected set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub stage: u8,
    pub step: usize,
    pub loss: f64,
    pub traj_nll: Option<f64>,
    pub inter_loss: Option<f64>,
    pub reward_gap: Option<f64>,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,stage,loss,traj_nll,inter_loss,reward_gap\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step,
            r.stage,
            r.loss,
            opt(r.traj_nll),
            opt(r.inter_loss),
            opt(r.reward_gap)
        ));
    }
    out
}

/// Result of a training run: the trained policy, the frozen stage-1
/// reference (equal to the policy itself for plain SFT), and the per-step
/// metrics.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub metrics: Vec<MetricsRow>,
}

struct Encoded {
    question: String,
    /// Number of ranked winner positions.
    k: usize,
    /// All items in global index order, ranked winners first.
    items: Vec<Vec<TokenId>>,
    /// Items re-ranked by dependency score for the full-order baseline.
    full_order: Vec<Vec<TokenId>>,
    /// Index into `items` of the pairwise loser (the best true loser).
    pair_loser: usize,
}

fn encode_corpus(corpus: &[RankedSample], policy: &ToyPolicy, table: &TokenTable) -> Result<Vec<Encoded>, BenchError> {
    let vocab = policy.vocab();
    corpus
        .iter()
        .map(|sample| {
            if sample.is_empty() || sample.top_k() == 0 {
                return Err(BenchError::Loss(LossError::EmptySample));
            }
            let items: Vec<Vec<TokenId>> = sample
                .items()
                .map(|item| vocab.encode(&tokenize_trajectory(&item.trajectory, table)))
                .collect::<Result<_, _>>()
                .map_err(LossError::from)?;
            let mut order: Vec<usize> = (0..sample.len()).collect();
            let all: Vec<_> = sample.items().collect();
            order.sort_by(|&a, &b| {
                (std::cmp::Reverse(all[a].dependency_score()), all[a].text())
                    .cmp(&(std::cmp::Reverse(all[b].dependency_score()), all[b].text()))
            });
            let full_order: Vec<Vec<TokenId>> = order.iter().map(|&i| items[i].clone()).collect();
            let pair_loser = sample
                .ordered_winners
                .len()
                .checked_add(sample.rejected.iter().position(|r| r.label == Label::Lose).ok_or_else(|| {
                    BenchError::InvalidArg(format!("sample for {:?} has no true loser", sample.question))
                })?)
                .expect("index fits");
            Ok(Encoded { question: sample.question.clone(), k: sample.top_k(), items, full_order, pair_loser })
        })
        .collect()
}

/// Cyclic batching with a seeded reshuffle at every wrap.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: SplitMix64,
}

impl Batcher {
    fn new(len: usize, batch_size: usize, rng: SplitMix64) -> Batcher {
        let batch = if batch_size == 0 { len } else { batch_size.min(len) };
        let mut b = Batcher { order: (0..len).collect(), cursor: 0, batch, rng };
        b.rng.shuffle(&mut b.order);
        b
    }

    fn next(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            if self.cursor == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn mean_loss<F>(policy: &ToyPolicy, batch: &[usize], mut per_item: F) -> Result<LossValue, LossError>
where
    F: FnMut(&ToyPolicy, usize) -> Result<LossValue, LossError>,
{
    let mut value = 0.0;
    let mut gradient = policy.zero_grad();
    for &idx in batch {
        let item = per_item(policy, idx)?;
        value += item.value;
        gradient.add_scaled(&item.gradient, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    gradient.scale(scale);
    Ok(LossValue { value: value * scale, gradient })
}

/// Run the configured method over the corpus. The vocabulary is the
/// synthesizer's closed pool plus any extra words found in the corpus.
pub fn train(
    method: TrainMethod,
    corpus: &[RankedSample],
    settings: &TrainSettings,
    table: &TokenTable,
) -> Result<TrainOutput, BenchError> {
    if corpus.is_empty() {
        return Err(BenchError::InvalidArg("corpus is empty".into()));
    }
    let vocab = super::corpus_vocab(corpus, table)?;
    let beta = settings.beta_typed()?;
    let coeffs = settings.coeffs()?;
    let aggregation = settings.aggregation();

    let mut policy = ToyPolicy::init(vocab, settings.contexts.max(1), settings.seed)?;
    let mut metrics = Vec::new();

    // Stage 1: prefix-conditioned SFT over every winning record.
    let mut sft_records: Vec<(String, Vec<TokenId>)> = Vec::new();
    for sample in corpus {
        for item in sample.items().filter(|i| i.label == Label::Win) {
            let conditioning = format!("{}{}", format_prefix(&item.prefix), sample.question);
            let ids = policy
                .vocab()
                .encode(&tokenize_trajectory(&item.trajectory, table))
                .map_err(LossError::from)?;
            sft_records.push((conditioning, ids));
        }
    }
    let mut batcher = Batcher::new(sft_records.len(), settings.batch_size, SplitMix64::new(settings.seed ^ 0x51f7));
    let mut step_size = settings.step_size;
    for step in 0..settings.steps {
        let batch = batcher.next();
        let outcome = descent_step(&mut policy, &mut step_size, 1e-12, &mut |p: &ToyPolicy| {
            mean_loss(p, &batch, |p, idx| {
                let (cond, ids) = &sft_records[idx];
                sequence_nll(p, cond, ids)
            })
        })
        .map_err(map_diverged)?;
        match outcome {
            Some(record) => metrics.push(MetricsRow {
                stage: 1,
                step,
                loss: record.loss_after,
                traj_nll: None,
                inter_loss: None,
                reward_gap: None,
            }),
            None => break,
        }
    }

    // The stage-1 parameters become the frozen reference.
    let reference = policy.clone();
    if method == TrainMethod::Sft {
        return Ok(TrainOutput { policy, reference, metrics });
    }

    let encoded = encode_corpus(corpus, &policy, table)?;
    let mut batcher = Batcher::new(encoded.len(), settings.batch_size, SplitMix64::new(settings.seed ^ 0x57a6e2));
    let mut step_size = settings.step_size;
    for step in 0..settings.steps {
        let batch = batcher.next();
        let mut nll_part = 0.0;
        let mut inter_part = 0.0;
        let outcome = descent_step(&mut policy, &mut step_size, 1e-12, &mut |p: &ToyPolicy| {
            nll_part = 0.0;
            inter_part = 0.0;
            let loss = mean_loss(p, &batch, |p, idx| {
                let enc = &encoded[idx];
                match method {
                    TrainMethod::Dpo => crate::losses::dpo_loss(
                        p,
                        &reference,
                        &enc.question,
                        &enc.items[0],
                        &enc.items[enc.pair_loser],
                        beta,
                    ),
                    TrainMethod::Fdpo => {
                        let k = enc.full_order.len().saturating_sub(1).max(1);
                        dadpo_loss_encoded(p, &reference, &enc.question, &enc.full_order, k, beta, ListwiseAggregation::Sum)
                    }
                    TrainMethod::Dadpo => {
                        let nll = sequence_nll(p, &enc.question, &enc.items[0])?;
                        let inter =
                            dadpo_loss_encoded(p, &reference, &enc.question, &enc.items, enc.k, beta, aggregation)?;
                        nll_part += nll.value;
                        inter_part += inter.value;
                        let value = coeffs.alpha1() * nll.value + coeffs.alpha2() * inter.value;
                        let mut gradient = nll.gradient;
                        gradient.scale(coeffs.alpha1());
                        gradient.add_scaled(&inter.gradient, coeffs.alpha2());
                        Ok(LossValue { value, gradient })
                    }
                    TrainMethod::Sft => unreachable!("handled above"),
                }
            })?;
            Ok(loss)
        })
        .map_err(map_diverged)?;
        match outcome {
            Some(record) => {
                let scale = 1.0 / batch.len() as f64;
                let gap = mean_reward_gap(&policy, &reference, &encoded, &batch, beta);
                metrics.push(MetricsRow {
                    stage: 2,
                    step,
                    loss: record.loss_after,
                    traj_nll: (method == TrainMethod::Dadpo).then_some(nll_part * scale),
                    inter_loss: (method == TrainMethod::Dadpo).then_some(inter_part * scale),
                    reward_gap: Some(gap),
                });
            }
            None => break,
        }
    }

    Ok(TrainOutput { policy, reference, metrics })
}

fn map_diverged(e: LossError) -> BenchError {
    match e {
        LossError::NonFiniteLoss(v) => BenchError::Diverged(v),
        other => BenchError::Loss(other),
    }
}

fn mean_reward_gap(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    encoded: &[Encoded],
    batch: &[usize],
    beta: Beta,
) -> f64 {
    let mut total = 0.0;
    for &idx in batch {
        let enc = &encoded[idx];
        let top: f64 = enc.items[..enc.k]
            .iter()
            .map(|ids| sequence_reward(policy, reference, &enc.question, ids, beta))
            .sum::<f64>()
            / enc.k as f64;
        let rest = &enc.items[enc.k..];
        if rest.is_empty() {
            continue;
        }
        let rejected: f64 = rest
            .iter()
            .map(|ids| sequence_reward(policy, reference, &enc.question, ids, beta))
            .sum::<f64>()
            / rest.len() as f64;
        total += top - rejected;
    }
    total / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synth::{build_training_corpus, gen_synthetic, CorpusSettings};

    fn tiny_corpus(seed: u64) -> Vec<RankedSample> {
        let ds = gen_synthetic(seed, 8, 0.5).unwrap();
        build_training_corpus(
            &ds.questions,
            CorpusSettings { winners_per_q: 4, losers_per_q: 4, top_k: 2 },
            seed,
            &TokenTable::standard(),
        )
        .unwrap()
    }

    fn quick_settings() -> TrainSettings {
        TrainSettings { steps: 40, batch_size: 4, ..TrainSettings::default() }
    }

    #[test]
    fn sft_skips_stage_two() {
        let corpus = tiny_corpus(1);
        let out = train(TrainMethod::Sft, &corpus, &quick_settings(), &TokenTable::standard()).unwrap();
        assert_eq!(out.policy, out.reference);
        assert!(out.metrics.iter().all(|r| r.stage == 1));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus(2);
        let table = TokenTable::standard();
        let a = train(TrainMethod::Dadpo, &corpus, &quick_settings(), &table).unwrap();
        let b = train(TrainMethod::Dadpo, &corpus, &quick_settings(), &table).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn dadpo_metrics_carry_both_components() {
        let corpus = tiny_corpus(3);
        let out = train(TrainMethod::Dadpo, &corpus, &quick_settings(), &TokenTable::standard()).unwrap();
        let stage2: Vec<_> = out.metrics.iter().filter(|r| r.stage == 2).collect();
        assert!(!stage2.is_empty());
        for row in &stage2 {
            let nll = row.traj_nll.expect("nll component logged");
            let inter = row.inter_loss.expect("inter component logged");
            assert!((0.5 * nll + 0.5 * inter - row.loss).abs() < 1e-9);
            assert!(row.reward_gap.is_some());
        }
    }

    #[test]
    fn full_batch_loss_curve_is_monotone() {
        let corpus = tiny_corpus(4);
        let settings = TrainSettings { batch_size: 0, steps: 60, ..TrainSettings::default() };
        let out = train(TrainMethod::Dadpo, &corpus, &settings, &TokenTable::standard()).unwrap();
        let stage2: Vec<f64> = out.metrics.iter().filter(|r| r.stage == 2).map(|r| r.loss).collect();
        for w in stage2.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn reference_is_stage_one_policy_frozen() {
        let corpus = tiny_corpus(5);
        let table = TokenTable::standard();
        let sft = train(TrainMethod::Sft, &corpus, &quick_settings(), &table).unwrap();
        let dpo = train(TrainMethod::Dpo, &corpus, &quick_settings(), &table).unwrap();
        assert_eq!(sft.policy, dpo.reference, "stage-1 parameters seed the reference");
        assert_ne!(dpo.policy, dpo.reference, "stage 2 moves the policy");
    }

    #[test]
    fn settings_from_kv_config() {
        let kv = crate::config::KvConfig::parse(
            "beta = 0.2\nalpha1 = 0.7\nalpha2 = 0.3\nstep_size = 0.5\nsteps = 120\nbatch_size = 16\nseed = 9\n",
        )
        .unwrap();
        let s = TrainSettings::from_kv(&kv).unwrap();
        assert_eq!(s.beta, 0.2);
        assert_eq!(s.alpha1, 0.7);
        assert_eq!(s.alpha2, 0.3);
        assert_eq!(s.step_size, 0.5);
        assert_eq!(s.steps, 120);
        assert_eq!(s.batch_size, 16);
        assert_eq!(s.seed, 9);
        // Missing keys fall back to the defaults.
        let empty = crate::config::KvConfig::default();
        assert_eq!(TrainSettings::from_kv(&empty).unwrap(), TrainSettings::default());
    }

    #[test]
    fn bad_coefficients_rejected_at_train_time() {
        let corpus = tiny_corpus(6);
        let settings = TrainSettings { alpha1: 0.9, alpha2: 0.3, ..quick_settings() };
        assert!(train(TrainMethod::Dadpo, &corpus, &settings, &TokenTable::standard()).is_err());
    }

    #[test]
    fn metrics_csv_shape() {
        let rows = vec![
            MetricsRow { stage: 1, step: 0, loss: 2.5, traj_nll: None, inter_loss: None, reward_gap: None },
            MetricsRow { stage: 2, step: 0, loss: 1.25, traj_nll: Some(2.0), inter_loss: Some(0.5), reward_gap: Some(0.1) },
        ];
        let csv = metrics_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,stage,loss,traj_nll,inter_loss,reward_gap");
        assert_eq!(lines.next().unwrap(), "0,1,2.5,,,");
        assert_eq!(lines.next().unwrap(), "0,2,1.25,2,0.5,0.1");
    }
}
