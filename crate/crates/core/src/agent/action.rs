//! Diagonal Gaussian over pre-softmax logits.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::fusion::EnsembleWeights;

/// `0.5 · ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightAction {
    pub logits: Vec<f64>,
    pub weights: EnsembleWeights,
    /// Joint log-density of `logits`.
    pub log_prob: f64,
    /// Log-density of each coordinate; sums to `log_prob`.
    pub agent_log_probs: Vec<f64>,
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn weights_from_logits(logits: &[f64]) -> EnsembleWeights {
    EnsembleWeights::new(softmax(logits)).expect("softmax output is on the simplex")
}

/// Log-density of `a` under `N(mean, exp(log_std)²)`.
pub fn gaussian_log_density(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

/// Per-coordinate log-densities and their sum.
pub fn log_prob(logits: &[f64], mean: &[f64], log_stds: &[f64]) -> (f64, Vec<f64>) {
    let per: Vec<f64> = logits
        .iter()
        .zip(mean)
        .zip(log_stds)
        .map(|((&a, &m), &s)| gaussian_log_density(a, m, s))
        .collect();
    (per.iter().sum(), per)
}

/// Entropy of one Gaussian coordinate.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    log_std + 0.5 + HALF_LN_2PI
}

/// Samples logits from the policy distribution, or takes the mean when
/// `deterministic` is set.
pub fn sample_action<R: Rng + ?Sized>(
    mean: &[f64],
    log_stds: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> WeightAction {
    let logits: Vec<f64> = if deterministic {
        mean.to_vec()
    } else {
        mean.iter()
            .zip(log_stds)
            .map(|(&m, &s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let (log_prob, agent_log_probs) = log_prob(&logits, mean, log_stds);
    WeightAction {
        weights: weights_from_logits(&logits),
        logits,
        log_prob,
        agent_log_probs,
    }
}
