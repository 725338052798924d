//! Advantage and return estimation.

use crate::{Error, Result};

/// Generalized advantage estimates by the backward recursion
/// `A_t = δ_t + γλ·A_{t+1}` with `δ_t = r_t + γ·V_{t+1} − V_t`, where
/// `V_T = bootstrap` (0 for a terminal state).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    Ok(adv)
}

/// TD errors `δ_t`.
pub fn td_errors(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = values.get(t + 1).copied().unwrap_or(bootstrap);
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// Discounted reward-to-go `Σ_l γ^l r_{t+l}` plus the discounted bootstrap.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = bootstrap;
    for t in (0..rewards.len()).rev() {
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    out
}

/// Shifts and scales to mean 0 and standard deviation 1 (population std,
/// floored at `1e-8`). Fewer than two entries are only centred.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for x in xs.iter_mut() {
        *x = (*x - mean) / std;
    }
}
