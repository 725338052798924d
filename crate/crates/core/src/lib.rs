//! Span-level ensemble decoding over several token-probability models.
//!
//! The decoder fuses the next-token distributions of `K` backends with a
//! weight vector on the probability simplex. Weights are chosen once per span
//! of `L` tokens by a learned policy (single-agent PPO or multi-agent MAPPO
//! with a centralized critic), or by one of the fixed baselines.
//!
//! Module map:
//! - [`vocab`]: unified vocabulary and zero-fill projection.
//! - [`backends`]: scripted experts, n-gram models and remote clients.
//! - [`logit_server`]: length-prefixed JSON wire protocol.
//! - [`fusion`]: the span-level ensemble decoder.
//! - [`agent`]: featurizer, policy/value network and action distribution.
//! - [`trainer`]: GAE, PPO/MAPPO losses and the training loop.
//! - [`baselines`]: uniform and perplexity weighting.
//! - [`harness`]: synthetic task suites, evaluation and experiments.
//! - [`config`]: the JSON run configuration.

pub mod agent;
pub mod backends;
pub mod baselines;
pub mod config;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod logit_server;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};

/// End-of-sequence token shared by every backend vocabulary.
pub const EOS: &str = "</s>";
