//! Clipped policy surrogates, value regression and their gradients with
//! respect to the network outputs.

use crate::agent::{
    gaussian_entropy, gaussian_log_density, Loss, LossValue, OutputGrad, PolicyOutput, Variant,
};
use crate::{Error, Result};

/// One training row assembled from a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
    pub old_log_prob: f64,
    pub old_agent_log_probs: Vec<f64>,
    pub advantage: f64,
    pub ret: f64,
}

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Whether the unclipped branch is the one selected by the `min`, i.e.
/// whether the term depends on the ratio.
fn unclipped_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyLoss {
    /// Batch mean of the clipped surrogate (the quantity being maximized).
    pub surrogate: f64,
    /// Batch mean policy entropy.
    pub entropy: f64,
    /// `−surrogate − entropy_coef · entropy`
    pub loss: f64,
    /// Largest `|ρ − 1|` in the batch.
    pub max_ratio_deviation: f64,
}

fn ratio(log_prob: f64, old: f64) -> Result<f64> {
    let r = (log_prob - old).exp();
    if !r.is_finite() {
        return Err(Error::Numeric(format!(
            "importance ratio is {r} (log-prob {log_prob}, old {old})"
        )));
    }
    Ok(r)
}

/// Adds `scale · ∂ log N(a_k; μ_k, σ_k) / ∂(μ_k, s_k)` into `g`.
fn add_log_density_grad(g: &mut OutputGrad, k: usize, a: f64, out: &PolicyOutput, scale: f64) {
    let sigma = out.log_stds[k].exp();
    let z = (a - out.mean_logits[k]) / sigma;
    g.mean_logits[k] += scale * z / sigma;
    g.log_stds[k] += scale * (z * z - 1.0);
}

fn check_batch(outputs: &[PolicyOutput], samples: &[Sample]) -> Result<()> {
    if outputs.len() != samples.len() || samples.is_empty() {
        return Err(Error::invalid(format!(
            "{} outputs for {} samples",
            outputs.len(),
            samples.len()
        )));
    }
    Ok(())
}

/// Single-agent clipped objective on the joint log-density of all `K` logits.
pub fn ppo_loss(
    outputs: &[PolicyOutput],
    samples: &[Sample],
    epsilon: f64,
    entropy_coef: f64,
) -> Result<(PolicyLoss, Vec<OutputGrad>)> {
    check_batch(outputs, samples)?;
    let n = samples.len() as f64;
    let mut surr_sum = 0.0;
    let mut ent_sum = 0.0;
    let mut max_dev = 0.0f64;
    let mut grads = Vec::with_capacity(samples.len());
    for (out, s) in outputs.iter().zip(samples) {
        let k = out.mean_logits.len();
        let lp: f64 = (0..k)
            .map(|i| gaussian_log_density(s.logits[i], out.mean_logits[i], out.log_stds[i]))
            .sum();
        let r = ratio(lp, s.old_log_prob)?;
        max_dev = max_dev.max((r - 1.0).abs());
        surr_sum += clipped_surrogate(r, s.advantage, epsilon);
        ent_sum += out
            .log_stds
            .iter()
            .map(|&ls| gaussian_entropy(ls))
            .sum::<f64>();

        let mut g = OutputGrad::zeros(k);
        if unclipped_active(r, s.advantage, epsilon) {
            let d_lp = -r * s.advantage / n;
            for i in 0..k {
                add_log_density_grad(&mut g, i, s.logits[i], out, d_lp);
            }
        }
        for i in 0..k {
            g.log_stds[i] -= entropy_coef / n;
        }
        grads.push(g);
    }
    let surrogate = surr_sum / n;
    let entropy = ent_sum / n;
    Ok((
        PolicyLoss {
            surrogate,
            entropy,
            loss: -surrogate - entropy_coef * entropy,
            max_ratio_deviation: max_dev,
        },
        grads,
    ))
}

/// Multi-agent objective: the mean over agents of each agent's clipped
/// surrogate on its own logit, all sharing the critic's advantages.
pub fn mappo_loss(
    outputs: &[PolicyOutput],
    samples: &[Sample],
    epsilon: f64,
    entropy_coef: f64,
) -> Result<(PolicyLoss, Vec<OutputGrad>)> {
    check_batch(outputs, samples)?;
    let n = samples.len() as f64;
    let k = outputs[0].mean_logits.len();
    let kf = k as f64;
    let mut grads: Vec<OutputGrad> = outputs
        .iter()
        .map(|o| OutputGrad::zeros(o.mean_logits.len()))
        .collect();
    let mut max_dev = 0.0f64;
    let mut agent_sum = 0.0;
    for agent in 0..k {
        let mut surr_sum = 0.0;
        for ((out, s), g) in outputs.iter().zip(samples).zip(grads.iter_mut()) {
            let lp =
                gaussian_log_density(s.logits[agent], out.mean_logits[agent], out.log_stds[agent]);
            let r = ratio(lp, s.old_agent_log_probs[agent])?;
            max_dev = max_dev.max((r - 1.0).abs());
            surr_sum += clipped_surrogate(r, s.advantage, epsilon);
            if unclipped_active(r, s.advantage, epsilon) {
                add_log_density_grad(g, agent, s.logits[agent], out, -r * s.advantage / n / kf);
            }
        }
        agent_sum += surr_sum / n;
    }
    let mut ent_sum = 0.0;
    for (out, g) in outputs.iter().zip(grads.iter_mut()) {
        ent_sum += out
            .log_stds
            .iter()
            .map(|&ls| gaussian_entropy(ls))
            .sum::<f64>()
            / kf;
        for i in 0..k {
            g.log_stds[i] -= entropy_coef / n / kf;
        }
    }
    let surrogate = agent_sum / kf;
    let entropy = ent_sum / n;
    Ok((
        PolicyLoss {
            surrogate,
            entropy,
            loss: -surrogate - entropy_coef * entropy,
            max_ratio_deviation: max_dev,
        },
        grads,
    ))
}

/// Mean squared error between predicted values and return targets, and its
/// gradient with respect to each prediction.
pub fn value_loss(values: &[f64], returns: &[f64]) -> Result<(f64, Vec<f64>)> {
    if values.len() != returns.len() || values.is_empty() {
        return Err(Error::invalid(format!(
            "{} values for {} returns",
            values.len(),
            returns.len()
        )));
    }
    let n = values.len() as f64;
    let loss = values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / n;
    let grad = values
        .iter()
        .zip(returns)
        .map(|(v, r)| 2.0 * (v - r) / n)
        .collect();
    Ok((loss, grad))
}

/// Policy loss of the given variant plus `value_coef` times the value MSE.
#[derive(Debug, Clone)]
pub struct CombinedLoss<'a> {
    pub variant: Variant,
    pub samples: &'a [Sample],
    pub epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub policy: PolicyLoss,
    pub value: f64,
    pub total: f64,
}

impl CombinedLoss<'_> {
    pub fn breakdown(&self, outputs: &[PolicyOutput]) -> Result<(LossBreakdown, Vec<OutputGrad>)> {
        let (policy, mut grads) = match self.variant {
            Variant::Ppo => ppo_loss(outputs, self.samples, self.epsilon, self.entropy_coef)?,
            Variant::Mappo => mappo_loss(outputs, self.samples, self.epsilon, self.entropy_coef)?,
        };
        let values: Vec<f64> = outputs.iter().map(|o| o.value).collect();
        let returns: Vec<f64> = self.samples.iter().map(|s| s.ret).collect();
        let (value, dv) = value_loss(&values, &returns)?;
        for (g, d) in grads.iter_mut().zip(dv) {
            g.value = self.value_coef * d;
        }
        Ok((
            LossBreakdown {
                policy,
                value,
                total: policy.loss + self.value_coef * value,
            },
            grads,
        ))
    }
}

impl Loss for CombinedLoss<'_> {
    fn evaluate(&self, _params: &[f64], outputs: &[PolicyOutput]) -> Result<LossValue> {
        let (b, output_grads) = self.breakdown(outputs)?;
        Ok(LossValue {
            loss: b.total,
            output_grads,
            param_grad: None,
        })
    }
}
