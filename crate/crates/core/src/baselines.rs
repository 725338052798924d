//! Fixed weighting strategies: uniform and prompt-perplexity weighting.

use rand::RngCore;

use crate::backends::{token_probabilities, Backend};
use crate::fusion::{Decision, Ensemble, EnsembleWeights, FusionConfig, SpanState, WeightPolicy};
use crate::{Error, Result};

/// Perplexities above this are treated as equal when weighting.
pub const PPL_CAP: f64 = 1e12;

pub fn uniform_weights(k: usize) -> Result<EnsembleWeights> {
    if k == 0 {
        return Err(Error::invalid("uniform weights need K >= 1"));
    }
    Ok(EnsembleWeights::uniform(k))
}

/// `exp(−(1/m) Σ ln p(x_i | x_<i))` over the backend's tokenization of
/// `text`; `+∞` if any token has probability zero.
pub fn ppl(backend: &dyn Backend, text: &str) -> Result<f64> {
    let probs = token_probabilities(backend, text)?;
    if probs.is_empty() {
        return Err(Error::invalid(format!(
            "{:?} has no tokens under {}",
            text,
            backend.name()
        )));
    }
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    Ok((-mean_log).exp())
}

/// Inverse-perplexity weights `w_k ∝ 1/PPL_k` with perplexities capped at
/// [`PPL_CAP`]. The flag is set when every perplexity hit the cap and the
/// weights are therefore uniform.
pub fn ppl_weights(backends: &[&dyn Backend], prompt: &str) -> Result<(EnsembleWeights, bool)> {
    if backends.is_empty() {
        return Err(Error::invalid("ppl weights need at least one backend"));
    }
    let ppls = backends
        .iter()
        .map(|b| ppl(*b, prompt).map(|p| p.min(PPL_CAP)))
        .collect::<Result<Vec<f64>>>()?;
    if ppls.iter().all(|&p| p >= PPL_CAP) {
        return Ok((EnsembleWeights::uniform(backends.len()), true));
    }
    let inv: Vec<f64> = ppls.iter().map(|p| 1.0 / p).collect();
    let z: f64 = inv.iter().sum();
    Ok((
        EnsembleWeights::new(inv.iter().map(|x| x / z).collect())?,
        false,
    ))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl WeightPolicy for UniformPolicy {
    fn decide(
        &self,
        _: &SpanState,
        ensemble: &Ensemble,
        _: &FusionConfig,
        _: &mut dyn RngCore,
    ) -> Result<Decision> {
        Ok(uniform_weights(ensemble.k())?.into())
    }
}

/// Weights from the prompt's perplexity under each backend, held for the
/// whole generation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PplPolicy;

impl WeightPolicy for PplPolicy {
    fn decide(
        &self,
        state: &SpanState,
        ensemble: &Ensemble,
        _: &FusionConfig,
        _: &mut dyn RngCore,
    ) -> Result<Decision> {
        let backends: Vec<&dyn Backend> = ensemble
            .members()
            .iter()
            .map(|m| m.backend.as_ref())
            .collect();
        let (w, all_capped) = ppl_weights(&backends, &state.prompt)?;
        if all_capped {
            log::debug!(
                "every backend assigns zero probability to {:?}; using uniform weights",
                state.prompt
            );
        }
        Ok(w.into())
    }
}
