//! Token-probability sources: the base models of the ensemble.
//!
//! Every backend owns its vocabulary and tokenizer and answers
//! [`Backend::next_distribution`] for a detokenized context string.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::logit_server::RemoteBackend;
use crate::vocab::{TokenDistribution, Vocab};
use crate::Result;

mod ngram;
mod scripted;

pub use ngram::{train_ngram, NgramModel};
pub use scripted::{Expertise, ScriptedExpert, UNKNOWN_ANSWER, WORDS};

/// Prompt plus the detokenized generation so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub context: String,
}

impl Query {
    pub fn new(context: impl Into<String>) -> Self {
        Self {
            context: context.into(),
        }
    }
}

/// A backend's answer to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub dist: TokenDistribution,
    /// Set when the backend had no statistics for the context and answered
    /// with a uniform distribution instead.
    pub fallback: bool,
}

/// How a backend splits text into tokens and joins them back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    #[default]
    Whitespace,
    Char,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
            Tokenizer::Char => text.chars().map(String::from).collect(),
        }
    }

    /// Appends `tokens` to `prefix`: single spaces for whitespace vocabularies,
    /// direct concatenation for character vocabularies.
    pub fn detokenize<S: AsRef<str>>(self, prefix: &str, tokens: &[S]) -> String {
        let mut out = prefix.to_owned();
        for tok in tokens {
            if self == Tokenizer::Whitespace && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok.as_ref());
        }
        out
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn vocab(&self) -> &Vocab;

    fn tokenizer(&self) -> Tokenizer;

    /// Distribution over [`Backend::vocab`] for the token following `query`.
    fn next_distribution(&self, query: &Query) -> Result<Prediction>;
}

/// Probability the backend assigns to each token of `text`, conditioning
/// each on the detokenized prefix before it. Tokens outside the backend's
/// vocabulary get probability zero.
pub fn token_probabilities(backend: &dyn Backend, text: &str) -> Result<Vec<f64>> {
    let tokenizer = backend.tokenizer();
    let tokens = tokenizer.tokenize(text);
    let mut out = Vec::with_capacity(tokens.len());
    for i in 0..tokens.len() {
        let context = tokenizer.detokenize("", &tokens[..i]);
        let pred = backend.next_distribution(&Query::new(context))?;
        out.push(
            backend
                .vocab()
                .id(&tokens[i])
                .map_or(0.0, |id| pred.dist.prob(id)),
        );
    }
    Ok(out)
}

fn default_temperature() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    1.0
}

fn default_timeout_ms() -> u64 {
    2000
}

/// Configuration of one backend, as found under `"backends"` in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    ScriptedExpert {
        expertise: Expertise,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Ngram {
        corpus: PathBuf,
        order: usize,
        #[serde(default = "default_smoothing")]
        smoothing: f64,
        #[serde(default)]
        tokenizer: Tokenizer,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vocab: Option<Vocab>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Remote {
        address: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        tokenizer: Tokenizer,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
}

impl BackendSpec {
    pub fn scripted(expertise: Expertise) -> Self {
        BackendSpec::ScriptedExpert {
            expertise,
            seed: 0,
            temperature: 1.0,
        }
    }

    /// Sampling temperature applied by the ensemble to this backend's output.
    /// 1.0 leaves distributions untouched.
    pub fn temperature(&self) -> f64 {
        match self {
            BackendSpec::ScriptedExpert { temperature, .. }
            | BackendSpec::Ngram { temperature, .. }
            | BackendSpec::Remote { temperature, .. } => *temperature,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            BackendSpec::ScriptedExpert { seed, .. }
            | BackendSpec::Ngram { seed, .. }
            | BackendSpec::Remote { seed, .. } => *seed,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Backend>> {
        Ok(match self {
            BackendSpec::ScriptedExpert { expertise, .. } => {
                Box::new(ScriptedExpert::new(*expertise))
            }
            BackendSpec::Ngram {
                corpus,
                order,
                smoothing,
                tokenizer,
                vocab,
                ..
            } => {
                let text = std::fs::read_to_string(corpus)?;
                Box::new(NgramModel::train(
                    &text,
                    *order,
                    vocab.clone(),
                    *smoothing,
                    *tokenizer,
                )?)
            }
            BackendSpec::Remote {
                address,
                timeout_ms,
                tokenizer,
                ..
            } => Box::new(RemoteBackend::connect(
                address,
                Duration::from_millis(*timeout_ms),
                *tokenizer,
            )?),
        })
    }
}
