//! Exactly differentiable stand-in for the language model: a tabular
//! first-order autoregressive categorical model. Sequence probability factors
//! as `Π_t softmax(logits[ctx(q), y_{t-1}])[y_t]` with `y_0` the BOS sentinel,
//! so log-probabilities, their gradients with respect to every logit, and
//! exhaustive normalization sums are all available in closed form.
//!
//! Questions condition the model through a stable FNV-1a hash into `C`
//! context buckets. The same type serves as both the trainable policy and the
//! frozen reference; reference freezing is a matter of never taking `&mut`.
//!
//! Normalization of the underlying softmax makes any partition function over
//! sequences cancel inside reward margins; nothing in this crate ever
//! computes one.
//!
//! Checkpoint file format (text, line oriented, bit-exact round trip):
//!
//! ```text
//! toy-policy v1
//! contexts <C>
//! seed <seed>
//! vocab <V> <token> ... <token>
//! <V floats>            # one line per (context, previous-token) row
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::rng::{fnv1a, SplitMix64};
use crate::trajectory::{TokenTable, Trajectory};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const MAX_VOCAB: usize = 64;

pub type TokenId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid policy parameter: {0}")]
    InvalidParam(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl From<std::io::Error> for PolicyError {
    fn from(e: std::io::Error) -> Self {
        PolicyError::Io(e.to_string())
    }
}

/// Ordered token list with BOS/EOS sentinels. Tokens are whitespace-free,
/// distinct, and at most [`MAX_VOCAB`] in number.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Vocab, PolicyError> {
        if tokens.len() < 2 || tokens.len() > MAX_VOCAB {
            return Err(PolicyError::InvalidVocab(format!(
                "need between 2 and {MAX_VOCAB} tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(PolicyError::InvalidVocab(format!("token {tok:?} is empty or has whitespace")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(PolicyError::InvalidVocab(format!("duplicate token {tok:?}")));
            }
        }
        let bos = *index.get(BOS).ok_or_else(|| PolicyError::InvalidVocab("missing <bos>".into()))?;
        let eos = *index.get(EOS).ok_or_else(|| PolicyError::InvalidVocab("missing <eos>".into()))?;
        Ok(Vocab { tokens, index, bos, eos })
    }

    /// Build a vocabulary from plain words, prepending the sentinels.
    pub fn with_sentinels<I, S>(words: I) -> Result<Vocab, PolicyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![BOS.to_owned(), EOS.to_owned()];
        tokens.extend(words.into_iter().map(Into::into));
        Vocab::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>, PolicyError> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).ok_or_else(|| PolicyError::UnknownToken(t.as_ref().to_owned())))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// Log-probability of one sequence with the per-position breakdown.
/// `value` is the sum of `per_position` and is never positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProb {
    pub value: f64,
    pub per_position: Vec<f64>,
}

/// Gradient with the same `C × V × V` shape as the policy logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    contexts: usize,
    vocab_len: usize,
    pub values: Vec<f64>,
}

impl LogitGrad {
    pub fn zeros(contexts: usize, vocab_len: usize) -> LogitGrad {
        LogitGrad { contexts, vocab_len, values: vec![0.0; contexts * vocab_len * vocab_len] }
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    fn offset(&self, ctx: usize, prev: TokenId) -> usize {
        (ctx * self.vocab_len + prev) * self.vocab_len
    }

    pub fn at(&self, ctx: usize, prev: TokenId, next: TokenId) -> f64 {
        self.values[self.offset(ctx, prev) + next]
    }

    /// `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &LogitGrad, scale: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values.iter_mut() {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Tabular autoregressive policy. Logits are indexed by
/// `(context bucket, previous token, next token)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: Vocab,
    contexts: usize,
    seed: u64,
    logits: Vec<f64>,
}

impl ToyPolicy {
    /// Initialize parameters deterministically from a seed. The zero seed is
    /// the uniform-policy convention (all logits zero); any other seed draws
    /// logits uniformly from the symmetric interval `(-1, 1)`.
    pub fn init(vocab: Vocab, contexts: usize, seed: u64) -> Result<ToyPolicy, PolicyError> {
        if contexts == 0 {
            return Err(PolicyError::InvalidParam("contexts must be at least 1".into()));
        }
        let n = contexts * vocab.len() * vocab.len();
        let logits = if seed == 0 {
            vec![0.0; n]
        } else {
            let mut rng = SplitMix64::new(seed);
            (0..n).map(|_| rng.next_symmetric()).collect()
        };
        Ok(ToyPolicy { vocab, contexts, seed, logits })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Direct parameter access for optimizers and gradient checks.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Stable hash of the conditioning text into a context bucket.
    pub fn context_of(&self, question: &str) -> usize {
        (fnv1a(question.as_bytes()) % self.contexts as u64) as usize
    }

    fn row(&self, ctx: usize, prev: TokenId) -> &[f64] {
        let v = self.vocab.len();
        let off = (ctx * v + prev) * v;
        &self.logits[off..off + v]
    }

    /// `θ ← θ − scale · grad`.
    pub fn apply_gradient(&mut self, grad: &LogitGrad, scale: f64) {
        debug_assert_eq!(grad.values.len(), self.logits.len());
        for (p, g) in self.logits.iter_mut().zip(grad.values.iter()) {
            *p -= scale * g;
        }
    }

    pub fn zero_grad(&self) -> LogitGrad {
        LogitGrad::zeros(self.contexts, self.vocab.len())
    }

    /// Log-probability of a token-id sequence conditioned on `question`.
    /// The sequence is expected to end with EOS; every position is scored,
    /// starting from the BOS sentinel.
    pub fn log_prob_ids(&self, question: &str, seq: &[TokenId]) -> SequenceLogProb {
        let ctx = self.context_of(question);
        let mut prev = self.vocab.bos();
        let mut per_position = Vec::with_capacity(seq.len());
        let mut value = 0.0;
        for &next in seq {
            let row = self.row(ctx, prev);
            let lp = row[next] - log_sum_exp(row);
            per_position.push(lp);
            value += lp;
            prev = next;
        }
        SequenceLogProb { value, per_position }
    }

    /// String-token variant of [`Self::log_prob_ids`].
    pub fn log_prob<S: AsRef<str>>(&self, question: &str, tokens: &[S]) -> Result<SequenceLogProb, PolicyError> {
        Ok(self.log_prob_ids(question, &self.vocab.encode(tokens)?))
    }

    /// Analytic gradient of `log π(seq | question)` with respect to every
    /// logit: `one-hot(next) − softmax(row)` accumulated over the visited
    /// `(context, previous)` rows; unvisited rows stay exactly zero.
    pub fn log_prob_grad_ids(&self, question: &str, seq: &[TokenId]) -> LogitGrad {
        let ctx = self.context_of(question);
        let v = self.vocab.len();
        let mut grad = self.zero_grad();
        let mut prev = self.vocab.bos();
        let mut probs = vec![0.0; v];
        for &next in seq {
            let row = self.row(ctx, prev);
            softmax_into(row, &mut probs);
            let off = grad.offset(ctx, prev);
            for (slot, p) in grad.values[off..off + v].iter_mut().zip(probs.iter()) {
                *slot -= p;
            }
            grad.values[off + next] += 1.0;
            prev = next;
        }
        grad
    }

    pub fn log_prob_grad<S: AsRef<str>>(&self, question: &str, tokens: &[S]) -> Result<LogitGrad, PolicyError> {
        Ok(self.log_prob_grad_ids(question, &self.vocab.encode(tokens)?))
    }

    /// Autoregressive sampling, terminated by EOS or `max_len` tokens.
    /// Deterministic given the generator state.
    pub fn sample(&self, question: &str, rng: &mut SplitMix64, max_len: usize) -> Vec<TokenId> {
        let ctx = self.context_of(question);
        let v = self.vocab.len();
        let mut probs = vec![0.0; v];
        let mut prev = self.vocab.bos();
        let mut out = Vec::new();
        for _ in 0..max_len {
            softmax_into(self.row(ctx, prev), &mut probs);
            let next = draw_categorical(&probs, rng);
            out.push(next);
            if next == self.vocab.eos() {
                break;
            }
            prev = next;
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "toy-policy v1")?;
        writeln!(w, "contexts {}", self.contexts)?;
        writeln!(w, "seed {}", self.seed)?;
        write!(w, "vocab {}", self.vocab.len())?;
        for tok in self.vocab.tokens() {
            write!(w, " {tok}")?;
        }
        writeln!(w)?;
        let v = self.vocab.len();
        for row in 0..self.contexts * v {
            let off = row * v;
            let mut line = String::new();
            for (i, val) in self.logits[off..off + v].iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{val}"));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ToyPolicy, PolicyError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let mut next_line = || -> Result<String, PolicyError> {
            lines
                .next()
                .ok_or_else(|| PolicyError::Checkpoint("unexpected end of file".into()))?
                .map_err(PolicyError::from)
        };

        let magic = next_line()?;
        if magic != "toy-policy v1" {
            return Err(PolicyError::Checkpoint(format!("bad magic line {magic:?}")));
        }
        let contexts: usize = parse_kv(&next_line()?, "contexts")?;
        let seed: u64 = parse_kv(&next_line()?, "seed")?;
        let vocab_line = next_line()?;
        let mut parts = vocab_line.split(' ');
        if parts.next() != Some("vocab") {
            return Err(PolicyError::Checkpoint("expected vocab line".into()));
        }
        let v: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PolicyError::Checkpoint("bad vocab count".into()))?;
        let tokens: Vec<String> = parts.map(str::to_owned).collect();
        if tokens.len() != v {
            return Err(PolicyError::Checkpoint(format!("vocab count {v} does not match {} tokens", tokens.len())));
        }
        let vocab = Vocab::new(tokens)?;
        let mut logits = Vec::with_capacity(contexts * v * v);
        for _ in 0..contexts * v {
            let line = next_line()?;
            for field in line.split(' ') {
                let x: f64 = field
                    .parse()
                    .map_err(|_| PolicyError::Checkpoint(format!("bad float {field:?}")))?;
                logits.push(x);
            }
        }
        if logits.len() != contexts * v * v {
            return Err(PolicyError::Checkpoint("wrong number of logits".into()));
        }
        Ok(ToyPolicy { vocab, contexts, seed, logits })
    }
}

fn parse_kv<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, PolicyError> {
    line.strip_prefix(key)
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PolicyError::Checkpoint(format!("expected `{key} <value>`, got {line:?}")))
}

/// Max-shifted log-sum-exp over a full logit row.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(row);
    for (o, &x) in out.iter_mut().zip(row.iter()) {
        *o = (x - lse).exp();
    }
}

fn draw_categorical(probs: &[f64], rng: &mut SplitMix64) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Tokenize a trajectory at the special-token/word level for policy scoring:
/// each step contributes its head literal, its whitespace-split payload
/// words, and its end literal; the sequence is closed with EOS. The question
/// conditions the model through the context hash and is not part of the
/// sequence.
pub fn tokenize_trajectory(t: &Trajectory, table: &TokenTable) -> Vec<String> {
    let mut out = Vec::new();
    for step in &t.steps {
        out.push(table.head(step.agent).to_owned());
        out.extend(step.payload.split_whitespace().map(str::to_owned));
        out.push(table.end(step.agent).to_owned());
    }
    out.push(EOS.to_owned());
    out
}

/// Vocabulary covering every trajectory the corpus synthesizer emits: the
/// twelve special-token literals, the sentinels, and the closed payload
/// word pool.
pub fn trajectory_vocab(table: &TokenTable, payload_words: &[&str]) -> Result<Vocab, PolicyError> {
    let mut tokens = vec![BOS.to_owned(), EOS.to_owned()];
    for agent in crate::trajectory::AgentKind::ALL {
        tokens.push(table.head(agent).to_owned());
        tokens.push(table.end(agent).to_owned());
    }
    tokens.extend(payload_words.iter().map(|w| (*w).to_owned()));
    Vocab::new(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AgentKind;

    fn small_vocab() -> Vocab {
        Vocab::with_sentinels(["a", "b"]).unwrap()
    }

    #[test]
    fn vocab_rules() {
        assert!(Vocab::new(vec![BOS.into()]).is_err());
        assert!(Vocab::new(vec![BOS.into(), "x".into()]).is_err(), "missing eos");
        assert!(Vocab::with_sentinels(["a", "a"]).is_err(), "duplicates");
        assert!(Vocab::with_sentinels(["a b"]).is_err(), "whitespace");
        let too_many: Vec<String> = (0..70).map(|i| format!("t{i}")).collect();
        assert!(Vocab::with_sentinels(too_many).is_err());
        let v = small_vocab();
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(v.bos()), BOS);
        assert_eq!(v.token(v.eos()), EOS);
    }

    #[test]
    fn zero_seed_is_uniform() {
        let p = ToyPolicy::init(small_vocab(), 2, 0).unwrap();
        assert!(p.logits().iter().all(|&x| x == 0.0));
        // Any length-3 sequence scores −3·ln V.
        let seq = p.vocab().encode(&["a", "b", EOS]).unwrap();
        let lp = p.log_prob_ids("anything", &seq);
        let expected = -3.0 * (4.0f64).ln();
        assert!((lp.value - expected).abs() < 1e-12, "{} vs {expected}", lp.value);
        assert!((lp.value - (-4.158883083359672)).abs() < 1e-9);
    }

    #[test]
    fn init_deterministic_and_seed_sensitive() {
        let a = ToyPolicy::init(small_vocab(), 3, 9).unwrap();
        let b = ToyPolicy::init(small_vocab(), 3, 9).unwrap();
        assert_eq!(a, b);
        let c = ToyPolicy::init(small_vocab(), 3, 10).unwrap();
        assert!(a.logits().iter().zip(c.logits()).any(|(x, y)| x != y));
        assert!(ToyPolicy::init(small_vocab(), 0, 1).is_err());
    }

    #[test]
    fn log_prob_matches_hand_softmax() {
        // Single transition with a known row: logits (2, 0, 0, 0).
        let mut p = ToyPolicy::init(small_vocab(), 1, 0).unwrap();
        let v = p.vocab().len();
        let bos = p.vocab().bos();
        p.logits_mut()[(bos * v)..(bos * v + v)].copy_from_slice(&[2.0, 0.0, 0.0, 0.0]);
        let target = 0usize;
        let lp = p.log_prob_ids("q", &[target]);
        let denom: f64 = (2.0f64).exp() + 3.0;
        let expected = 2.0 - denom.ln();
        assert!((lp.per_position[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn value_is_sum_of_positions() {
        let p = ToyPolicy::init(small_vocab(), 2, 77).unwrap();
        let seq = p.vocab().encode(&["a", "b", "a", EOS]).unwrap();
        let lp = p.log_prob_ids("some question", &seq);
        let sum: f64 = lp.per_position.iter().sum();
        assert!((lp.value - sum).abs() < 1e-12);
        assert!(lp.value <= 0.0);
    }

    #[test]
    fn unknown_token_errors() {
        let p = ToyPolicy::init(small_vocab(), 1, 1).unwrap();
        match p.log_prob("q", &["zzz"]) {
            Err(PolicyError::UnknownToken(t)) => assert_eq!(t, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_gradient_is_onehot_minus_uniform() {
        let p = ToyPolicy::init(small_vocab(), 1, 0).unwrap();
        let v = p.vocab().len();
        let seq = p.vocab().encode(&["a", EOS]).unwrap();
        let grad = p.log_prob_grad_ids("q", &seq);
        let ctx = p.context_of("q");
        let bos = p.vocab().bos();
        for next in 0..v {
            let expected = if next == seq[0] { 1.0 - 1.0 / v as f64 } else { -1.0 / v as f64 };
            assert!((grad.at(ctx, bos, next) - expected).abs() < 1e-12);
        }
        // Unvisited rows are exactly zero.
        let b = p.vocab().id("b").unwrap();
        for next in 0..v {
            assert_eq!(grad.at(ctx, b, next), 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(123);
        for trial in 0..50 {
            let contexts = 1 + (trial % 3);
            let mut p = ToyPolicy::init(small_vocab(), contexts, 1000 + trial as u64).unwrap();
            let q = format!("question {trial}");
            let len = 1 + rng.next_below(4) as usize;
            let mut seq: Vec<TokenId> = (0..len).map(|_| rng.next_below(p.vocab().len() as u64 - 1) as usize).collect();
            seq.push(p.vocab().eos());

            let grad = p.log_prob_grad_ids(&q, &seq);
            let h = 1e-5;
            let mut max_rel: f64 = 0.0;
            for idx in 0..p.logits().len() {
                let orig = p.logits()[idx];
                p.logits_mut()[idx] = orig + h;
                let up = p.log_prob_ids(&q, &seq).value;
                p.logits_mut()[idx] = orig - h;
                let down = p.log_prob_ids(&q, &seq).value;
                p.logits_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = grad.values[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-5, "trial {trial}: max rel err {max_rel}");
        }
    }

    #[test]
    fn sampling_respects_degenerate_distribution() {
        let mut p = ToyPolicy::init(small_vocab(), 1, 0).unwrap();
        // Force BOS→a, a→EOS with a huge logit as the +∞ surrogate.
        let v = p.vocab().len();
        let bos = p.vocab().bos();
        let a = p.vocab().id("a").unwrap();
        let eos = p.vocab().eos();
        p.logits_mut()[bos * v + a] = 1e6;
        p.logits_mut()[(a * v)..(a * v + v)][eos] = 1e6;
        for seed in 0..20 {
            let mut rng = SplitMix64::new(seed);
            assert_eq!(p.sample("q", &mut rng, 10), vec![a, eos]);
        }
    }

    #[test]
    fn sampling_uniform_frequencies() {
        // V=4, single draw: each token within 3σ of 0.25 over 10k draws.
        let p = ToyPolicy::init(small_vocab(), 1, 0).unwrap();
        let mut rng = SplitMix64::new(99);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let first = p.sample("q", &mut rng, 1)[0];
            counts[first] += 1;
        }
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 3.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn sampling_deterministic_per_seed() {
        let p = ToyPolicy::init(small_vocab(), 2, 5).unwrap();
        let a = p.sample("q", &mut SplitMix64::new(17), 16);
        let b = p.sample("q", &mut SplitMix64::new(17), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_sums_to_one() {
        // All terminated sequences of length ≤ 3 plus the not-yet-terminated
        // remainder at horizon 3 partition the probability space.
        let vocab = Vocab::with_sentinels(["a"]).unwrap(); // V = 3
        let p = ToyPolicy::init(vocab, 2, 31).unwrap();
        let v = p.vocab().len();
        let eos = p.vocab().eos();
        let q = "norm";
        let mut total = 0.0;
        // Interior tokens range over the whole vocabulary except EOS.
        let interior: Vec<TokenId> = (0..v).filter(|&t| t != eos).collect();
        for len in 1..=3usize {
            let interior_len = len - 1;
            let mut idxs = vec![0usize; interior_len];
            loop {
                let mut seq: Vec<TokenId> = idxs.iter().map(|&i| interior[i]).collect();
                seq.push(eos);
                total += p.log_prob_ids(q, &seq).value.exp();
                // Odometer increment.
                let mut pos = 0;
                loop {
                    if pos == interior_len {
                        break;
                    }
                    idxs[pos] += 1;
                    if idxs[pos] < interior.len() {
                        break;
                    }
                    idxs[pos] = 0;
                    pos += 1;
                }
                if pos == interior_len {
                    break;
                }
            }
        }
        // EOS-absorbing remainder: three interior tokens, no EOS yet.
        let mut idxs = [0usize; 3];
        loop {
            let seq: Vec<TokenId> = idxs.iter().map(|&i| interior[i]).collect();
            total += p.log_prob_ids(q, &seq).value.exp();
            let mut pos = 0;
            loop {
                if pos == 3 {
                    break;
                }
                idxs[pos] += 1;
                if idxs[pos] < interior.len() {
                    break;
                }
                idxs[pos] = 0;
                pos += 1;
            }
            if pos == 3 {
                break;
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let table = TokenTable::standard();
        let vocab = trajectory_vocab(&table, &["ans", "right"]).unwrap();
        let p = ToyPolicy::init(vocab, 3, 4242).unwrap();
        let dir = std::env::temp_dir().join(format!("trajalign-policy-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.policy");
        p.save(&path).unwrap();
        let q = ToyPolicy::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.logits().len(), q.logits().len());
        assert!(p.logits().iter().zip(q.logits()).all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tokenize_trajectory_structure() {
        let table = TokenTable::standard();
        let t = Trajectory::single_round(
            "q",
            &[(AgentKind::ResponseGenerator, "ans right"), (AgentKind::AnswerVerifier, "")],
        );
        let toks = tokenize_trajectory(&t, &table);
        assert_eq!(
            toks,
            vec!["⟨Generator⟩", "ans", "right", "⟨/eog⟩", "⟨Verifier⟩", "⟨/eov⟩", EOS]
        );
    }

    #[test]
    fn context_hash_is_stable_and_bounded() {
        let p = ToyPolicy::init(small_vocab(), 7, 0).unwrap();
        for q in ["", "a", "some longer question?"] {
            let c = p.context_of(q);
            assert!(c < 7);
            assert_eq!(c, p.context_of(q));
        }
    }
}
