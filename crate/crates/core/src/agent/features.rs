//! Fixed-length state features for the weight policy.
//!
//! Layout for `K` backends and `hash_dim` buckets (`D = 4K + 3 + hash_dim`):
//!
//! | offset      | entries | meaning                                                      |
//! |-------------|---------|--------------------------------------------------------------|
//! | `4k`        | 1       | mean log-prob of the last `window` context tokens, model `k` |
//! | `4k + 1`    | 1       | entropy (nats) of model `k`'s next-token distribution         |
//! | `4k + 2`    | 1       | 1.0 if model `k`'s top token equals the majority top token    |
//! | `4k + 3`    | 1       | log-perplexity of the whole context under model `k`           |
//! | `4K`        | 1       | `t · L / H_max`                                               |
//! | `4K + 1`    | 1       | span index `t`                                                |
//! | `4K + 2`    | 1       | `K`                                                           |
//! | `4K + 3`    | hash_dim| hashed character-trigram counts of the prompt                |
//!
//! Token probabilities are floored at [`PROB_FLOOR`] before taking logs so
//! that tokens a model cannot produce give a large but finite penalty.

use serde::{Deserialize, Serialize};

use crate::backends::token_probabilities;
use crate::fusion::{Ensemble, FusionConfig, SpanState};
use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-8;

fn default_hash_dim() -> usize {
    32
}

fn default_window() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "default_hash_dim")]
    pub hash_dim: usize,
    /// Trailing tokens averaged by the per-model log-prob feature.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            hash_dim: default_hash_dim(),
            window: default_window(),
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self, k: usize) -> usize {
        4 * k + 3 + self.hash_dim
    }

    /// Recovers the hash width from a feature dimension.
    pub fn for_dim(dim: usize, k: usize) -> Result<Self> {
        let hash_dim = dim.checked_sub(4 * k + 3).ok_or_else(|| {
            Error::invalid(format!("feature dimension {dim} is too small for K={k}"))
        })?;
        Ok(Self {
            hash_dim,
            ..Self::default()
        })
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Counts of character trigrams hashed into `dim` buckets.
pub fn trigram_hash(text: &str, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if dim == 0 {
        return out;
    }
    let chars: Vec<char> = text.chars().collect();
    for w in chars.windows(3) {
        let s: String = w.iter().collect();
        out[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    out
}

/// Per-model statistics of the context: (trailing mean log-prob, log-perplexity).
fn context_scores(logs: &[f64], window: usize) -> (f64, f64) {
    if logs.is_empty() {
        return (0.0, 0.0);
    }
    let tail = &logs[logs.len().saturating_sub(window.max(1))..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len() as f64;
    let log_ppl = -logs.iter().sum::<f64>() / logs.len() as f64;
    (mean_tail, log_ppl)
}

/// Builds the feature vector for the decision at the start of `state`'s next span.
pub fn featurize(
    state: &SpanState,
    ensemble: &Ensemble,
    fusion: &FusionConfig,
    config: &FeatureConfig,
) -> Result<Vec<f64>> {
    let k = ensemble.k();
    let context = state.context(fusion.detokenize);
    let preds = ensemble.step(&context)?;
    let tops: Vec<usize> = preds.iter().map(|p| p.dist.argmax()).collect();
    let majority = majority(&tops);

    let mut out = Vec::with_capacity(config.dim(k));
    for (i, member) in ensemble.members().iter().enumerate() {
        let logs: Vec<f64> = token_probabilities(member.backend.as_ref(), &context)?
            .into_iter()
            .map(|p| p.max(PROB_FLOOR).ln())
            .collect();
        ensemble.record_calls(logs.len() as u64);
        let (mean_tail, log_ppl) = context_scores(&logs, config.window);
        out.push(mean_tail);
        out.push(preds[i].dist.entropy());
        out.push(if tops[i] == majority { 1.0 } else { 0.0 });
        out.push(log_ppl);
    }
    let t = state.t as f64;
    out.push(t * fusion.span_length as f64 / fusion.max_tokens as f64);
    out.push(t);
    out.push(k as f64);
    out.extend(trigram_hash(&state.prompt, config.hash_dim));
    debug_assert!(out.iter().all(|x| x.is_finite()));
    Ok(out)
}

/// Most frequent value; ties go to the smallest.
fn majority(ids: &[usize]) -> usize {
    let mut best = (0usize, usize::MAX);
    for &id in ids {
        let n = ids.iter().filter(|&&x| x == id).count();
        if n > best.0 || (n == best.0 && id < best.1) {
            best = (n, id);
        }
    }
    best.1
}
