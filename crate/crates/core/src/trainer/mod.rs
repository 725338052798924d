//! Policy training: rollout collection, advantage estimation and clipped
//! policy-gradient updates for both the single-agent (PPO) and multi-agent
//! (MAPPO) policy layouts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Arch, FeatureConfig, PolicyNet, RlPolicy, Variant};
use crate::fusion::{Ensemble, FusionConfig};
use crate::harness::Task;
use crate::{Error, Result};

mod collect;
mod gae;
mod loss;
mod optim;

pub use collect::{
    collect, trajectory_from_trace, Buffer, ExactMatch, RewardFn, Trajectory, Transition,
    MAX_ATTEMPTS,
};
pub use gae::{discounted_returns, gae, normalize, td_errors};
pub use loss::{
    clipped_surrogate, mappo_loss, ppo_loss, value_loss, CombinedLoss, LossBreakdown, PolicyLoss,
    Sample,
};
pub use optim::{clip_grad_norm, cosine_lr, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    /// Clip range of the importance ratio.
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Episodes collected per iteration.
    pub buffer: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub num_epochs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub minibatch: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub seed: u64,
    /// Rollout threads.
    pub workers: usize,
    /// Checkpoint period in iterations.
    pub checkpoint_every: usize,
    pub hidden: Vec<usize>,
    pub features: FeatureConfig,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            buffer: 128,
            lr: 1e-4,
            schedule: Schedule::Cosine,
            num_epochs: 3,
            entropy_coef: 0.01,
            value_coef: 0.5,
            minibatch: 32,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            optimizer: OptimizerKind::Adam,
            iterations: 200,
            seed: 0,
            workers: 1,
            checkpoint_every: 10,
            hidden: vec![64, 64],
            features: FeatureConfig::default(),
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("rl.{key} {why}")));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon", "must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must be in [0, 1]");
        }
        if self.buffer == 0 {
            return bad("buffer", "must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.num_epochs == 0 {
            return bad("num_epochs", "must be >= 1");
        }
        if !self.entropy_coef.is_finite() {
            return bad("entropy_coef", "must be finite");
        }
        if !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return bad("value_coef", "must be >= 0");
        }
        if self.minibatch == 0 {
            return bad("minibatch", "must be >= 1");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm", "must be positive");
        }
        if self.workers == 0 {
            return bad("workers", "must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "must list positive layer widths");
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        match self.schedule {
            Schedule::Cosine => cosine_lr(self.lr, iter, self.iterations),
            Schedule::Constant => self.lr,
        }
    }
}

/// Statistics of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub episodes: usize,
    /// Mean pre-clip gradient norm over the iteration's updates.
    pub grad_norm: f64,
    /// `max |ρ − 1|` on the first update of the iteration; zero by construction.
    pub first_ratio_deviation: f64,
    pub advantages_normalized: bool,
    /// Mean ensemble weight per backend over all rollout spans.
    pub mean_weights: Vec<f64>,
}

pub const METRICS_HEADER: &str = "iter,mean_reward,policy_loss,value_loss,entropy,lr";

impl IterMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.mean_reward, self.policy_loss, self.value_loss, self.entropy, self.lr
        )
    }
}

pub fn write_metrics_csv<W: Write>(metrics: &[IterMetrics], mut w: W) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(w, "{}", m.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: RlPolicy,
    pub metrics: Vec<IterMetrics>,
    /// Set when training stopped on a numeric failure; `policy` then holds
    /// the last parameters that were finite.
    pub aborted: Option<String>,
}

/// Turns a buffer into training rows: GAE advantages against the recorded
/// values (terminal bootstrap 0) and discounted reward-to-go targets.
pub fn build_samples(buffer: &Buffer, config: &RLConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for traj in &buffer.trajectories {
        let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = traj.transitions.iter().map(|t| t.value).collect();
        let adv = gae(&rewards, &values, 0.0, config.gamma, config.lambda)?;
        let ret = discounted_returns(&rewards, 0.0, config.gamma);
        for (i, t) in traj.transitions.iter().enumerate() {
            samples.push(Sample {
                features: t.features.clone(),
                logits: t.action_logits.clone(),
                old_log_prob: t.old_log_prob,
                old_agent_log_probs: t.old_agent_log_probs.clone(),
                advantage: adv[i],
                ret: ret[i],
            });
        }
    }
    if config.normalize_advantages {
        let mut a: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize(&mut a);
        samples.iter_mut().zip(a).for_each(|(s, a)| s.advantage = a);
    }
    Ok(samples)
}

/// Loss breakdown and parameter gradient of the combined loss on a minibatch.
pub fn minibatch_gradient(
    net: &PolicyNet,
    loss: &CombinedLoss,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut outputs = Vec::with_capacity(loss.samples.len());
    let mut caches = Vec::with_capacity(loss.samples.len());
    for s in loss.samples {
        let (o, c) = net.forward_cached(&s.features)?;
        outputs.push(o);
        caches.push(c);
    }
    let (b, grads) = loss.breakdown(&outputs)?;
    if !b.total.is_finite() {
        return Err(Error::Numeric(format!("combined loss is {}", b.total)));
    }
    let mut g = vec![0.0; net.num_params()];
    for (c, d) in caches.iter().zip(&grads) {
        net.backward(c, d, &mut g);
    }
    Ok((b, g))
}

/// Fresh policy for `K` backends under `config`.
pub fn init_policy(
    config: &RLConfig,
    variant: Variant,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> RlPolicy {
    let arch = Arch::new(variant, config.features.dim(k), k).with_hidden(config.hidden.clone());
    RlPolicy::new(PolicyNet::init(arch, rng), config.features)
}

/// Trains a weight policy on `tasks`. `on_iter` runs after every iteration
/// with that iteration's metrics and the current policy.
pub fn train(
    config: &RLConfig,
    variant: Variant,
    ensemble: &Ensemble,
    fusion: &FusionConfig,
    tasks: &[Task],
    on_iter: &mut dyn FnMut(&IterMetrics, &RlPolicy) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    fusion.validate()?;
    if ensemble.k() < 2 {
        return Err(Error::Config(format!(
            "training needs at least two backends, got {}",
            ensemble.k()
        )));
    }
    if tasks.is_empty() {
        return Err(Error::invalid("training needs at least one task"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = init_policy(config, variant, ensemble.k(), &mut rng);
    let mut opt = Optimizer::new(config.optimizer, policy.net.num_params());
    let mut metrics = Vec::new();

    for iter in 0..config.iterations {
        let lr = config.lr_at(iter);
        let rollout_policy = policy.clone().stochastic(true);
        let buffer = collect::collect(
            &rollout_policy,
            ensemble,
            fusion,
            tasks,
            config.buffer,
            &ExactMatch,
            config.workers,
            &mut rng,
        );
        let mut samples = build_samples(&buffer, config)?;
        let last_good = policy.net.clone();

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut updates = 0usize;
        let mut first_dev = 0.0;
        let mut failure = None;
        'epochs: for epoch in 0..config.num_epochs {
            samples.shuffle(&mut rng);
            for (mb, batch) in samples.chunks(config.minibatch).enumerate() {
                let loss = CombinedLoss {
                    variant,
                    samples: batch,
                    epsilon: config.epsilon,
                    entropy_coef: config.entropy_coef,
                    value_coef: config.value_coef,
                };
                let (b, mut g) = match minibatch_gradient(&policy.net, &loss) {
                    Ok(x) => x,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break 'epochs;
                    }
                };
                if epoch == 0 && mb == 0 {
                    first_dev = b.policy.max_ratio_deviation;
                    if first_dev != 0.0 {
                        return Err(Error::Numeric(format!(
                            "importance ratio deviates from 1 by {first_dev} before any update"
                        )));
                    }
                }
                let norm = clip_grad_norm(&mut g, config.max_grad_norm);
                opt.step(policy.net.params_mut(), &g, lr);
                if policy.net.params().iter().any(|p| !p.is_finite()) {
                    failure = Some(format!(
                        "non-finite parameters after update {updates} of iteration {iter}"
                    ));
                    break 'epochs;
                }
                sums.0 += b.policy.loss;
                sums.1 += b.value;
                sums.2 += b.policy.entropy;
                sums.3 += norm;
                updates += 1;
            }
        }
        if let Some(reason) = failure {
            log::error!("training aborted: {reason}");
            policy.net = last_good;
            return Ok(TrainOutcome {
                policy,
                metrics,
                aborted: Some(reason),
            });
        }

        let k = ensemble.k();
        let mut mean_weights = vec![0.0; k];
        let mut spans = 0usize;
        for t in buffer.transitions() {
            mean_weights
                .iter_mut()
                .zip(&t.weights)
                .for_each(|(m, w)| *m += w);
            spans += 1;
        }
        if spans > 0 {
            mean_weights.iter_mut().for_each(|m| *m /= spans as f64);
        }
        let u = updates.max(1) as f64;
        let m = IterMetrics {
            iter,
            mean_reward: buffer.mean_terminal_reward(),
            policy_loss: sums.0 / u,
            value_loss: sums.1 / u,
            entropy: sums.2 / u,
            lr,
            episodes: buffer.len(),
            grad_norm: sums.3 / u,
            first_ratio_deviation: first_dev,
            advantages_normalized: config.normalize_advantages,
            mean_weights,
        };
        log::info!(
            "iter {iter}: reward {:.3} policy {:.4} value {:.4} entropy {:.3} weights {:?}",
            m.mean_reward,
            m.policy_loss,
            m.value_loss,
            m.entropy,
            m.mean_weights
        );
        on_iter(&m, &policy)?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        policy,
        metrics,
        aborted: None,
    })
}
