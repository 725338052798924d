//! The weight policy: state features, the policy/value network, the
//! Gaussian-logit action distribution and gradients of losses defined on
//! the network outputs.

use rand::RngCore;

use crate::fusion::{ActionRecord, Decision, Ensemble, FusionConfig, SpanState, WeightPolicy};
use crate::{Error, Result};

mod action;
pub mod checkpoint;
mod features;
mod net;

pub use action::{
    gaussian_entropy, gaussian_log_density, log_prob, sample_action, softmax, weights_from_logits,
    WeightAction, HALF_LN_2PI,
};
pub use features::{featurize, trigram_hash, FeatureConfig, PROB_FLOOR};
pub use net::{Arch, ForwardCache, OutputGrad, PolicyNet, PolicyOutput, Variant};

/// Value and gradients of a loss on a batch of network outputs.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub loss: f64,
    /// `dL/d(output)` for each batch row.
    pub output_grads: Vec<OutputGrad>,
    /// Direct dependence on the parameters (e.g. a weight penalty).
    pub param_grad: Option<Vec<f64>>,
}

/// A scalar loss of the network outputs (and optionally the raw parameters).
pub trait Loss {
    fn evaluate(&self, params: &[f64], outputs: &[PolicyOutput]) -> Result<LossValue>;
}

/// Loss value alone, without the backward pass.
pub fn loss_value(net: &PolicyNet, loss: &dyn Loss, batch: &[Vec<f64>]) -> Result<f64> {
    let outputs = batch
        .iter()
        .map(|x| net.forward(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(loss.evaluate(net.params(), &outputs)?.loss)
}

/// Reverse-mode gradient of `loss` over `batch` with respect to every parameter.
pub fn grad(net: &PolicyNet, loss: &dyn Loss, batch: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let mut outputs = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for x in batch {
        let (o, c) = net.forward_cached(x)?;
        outputs.push(o);
        caches.push(c);
    }
    let value = loss.evaluate(net.params(), &outputs)?;
    if !value.loss.is_finite() {
        let max_param = net.params().iter().fold(0.0f64, |m, p| m.max(p.abs()));
        return Err(Error::Numeric(format!(
            "loss is {} on a batch of {} (max |param| {max_param:e})",
            value.loss,
            batch.len()
        )));
    }
    let mut g = value
        .param_grad
        .unwrap_or_else(|| vec![0.0; net.num_params()]);
    for (cache, d) in caches.iter().zip(&value.output_grads) {
        net.backward(cache, d, &mut g);
    }
    Ok((value.loss, g))
}

/// A trained (or freshly initialized) network acting as a [`WeightPolicy`].
#[derive(Debug, Clone)]
pub struct RlPolicy {
    pub net: PolicyNet,
    pub features: FeatureConfig,
    /// Sample logits (training) rather than use the mean (evaluation).
    pub stochastic: bool,
}

impl RlPolicy {
    pub fn new(net: PolicyNet, features: FeatureConfig) -> Self {
        Self {
            net,
            features,
            stochastic: false,
        }
    }

    pub fn stochastic(mut self, on: bool) -> Self {
        self.stochastic = on;
        self
    }
}

impl WeightPolicy for RlPolicy {
    fn decide(
        &self,
        state: &SpanState,
        ensemble: &Ensemble,
        config: &FusionConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Decision> {
        if ensemble.k() != self.net.k() {
            return Err(Error::invalid(format!(
                "policy was built for {} backends, ensemble has {}",
                self.net.k(),
                ensemble.k()
            )));
        }
        let features = featurize(state, ensemble, config, &self.features)?;
        let out = self.net.forward(&features)?;
        let action = sample_action(&out.mean_logits, &out.log_stds, rng, !self.stochastic);
        Ok(Decision {
            weights: action.weights,
            action: Some(ActionRecord {
                features,
                logits: action.logits,
                log_prob: action.log_prob,
                agent_log_probs: action.agent_log_probs,
                value: out.value,
            }),
        })
    }
}
