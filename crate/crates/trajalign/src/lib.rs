//! Multi-agent trajectory alignment at desk scale.
//!
//! Six specialized agents (intent reconstructor, knowledge retriever, filter,
//! locator, response generator, answer verifier) cooperate on a question and
//! leave behind a *trajectory*: an ordered list of special-token-delimited
//! steps. This crate implements the full alignment stack around that data
//! model:
//!
//! * [`trajectory`]: the trajectory grammar. Agents, head/end special
//!   tokens, a bit-exact parser/serializer, structural validation, and token
//!   accounting.
//! * [`preference`]: preference data construction. Per-agent utility scores
//!   from a deterministic rubric, formatted score prefixes, dependency
//!   scores, and top-K ranked samples with a JSONL dataset form.
//! * [`policy`]: an exactly differentiable tabular autoregressive policy
//!   that stands in for the language model, with analytic gradients,
//!   sampling, and bit-exact checkpoints.
//! * [`losses`]: the training objectives. Trajectory NLL, prefix-conditioned
//!   SFT, pairwise preference loss, dependency-aware and full-order listwise
//!   losses, their affine combination, a finite-difference gradient auditor,
//!   and a halving-on-increase gradient descent loop.
//! * [`orchestrator`]: the inference state machine over pluggable agent
//!   backends (scripted, deterministic mocks, or a line-delimited remote
//!   protocol), with filter/relevance safety guards and a bounded verifier
//!   retry loop.
//! * [`bench`]: a synthetic benchmark. Question/knowledge-base generation,
//!   ranked-corpus synthesis, the two-stage training driver, evaluation
//!   metrics, and comparison reports.
//!
//! The `trajalign` binary exposes the same functionality as subcommands; see
//! the crate README and `examples/` for end-to-end walkthroughs.

pub mod bench;
pub mod config;
pub mod losses;
pub mod orchestrator;
pub mod policy;
pub mod preference;
pub mod rng;
pub mod trajectory;

pub use config::KvConfig;
pub use losses::{Beta, ListwiseAggregation, LossValue, MixCoefficients};
pub use policy::{ToyPolicy, Vocab};
pub use preference::{Label, PreferencePrefix, QuestionFeatures, RankedSample, ScoredTrajectory};
pub use rng::SplitMix64;
pub use trajectory::{AgentKind, TokenTable, Tokenizer, Trajectory, TrajectoryStep};
