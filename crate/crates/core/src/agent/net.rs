//! Tanh MLP policy/value networks with hand-written reverse mode.
//!
//! All parameters live in one flat `Vec<f64>`; layers address it by offset.
//! Two layouts exist:
//! - PPO: one shared trunk feeding a `K`-logit policy head and a value head.
//! - MAPPO: `K` independent actor towers, each emitting one scalar logit,
//!   plus a separate centralized critic tower.
//!
//! Both also carry `K` state-independent log standard deviations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ppo,
    Mappo,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Ppo => "ppo",
            Variant::Mappo => "mappo",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Variant::Ppo),
            "mappo" => Ok(Variant::Mappo),
            other => Err(Error::invalid(format!(
                "unknown algorithm {other:?} (ppo|mappo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub variant: Variant,
    pub input_dim: usize,
    pub k: usize,
    pub hidden: Vec<usize>,
}

impl Arch {
    pub fn new(variant: Variant, input_dim: usize, k: usize) -> Self {
        Self {
            variant,
            input_dim,
            k,
            hidden: vec![64, 64],
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    /// e.g. `mlp-tanh-64x64`
    pub fn name(&self) -> String {
        let widths: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!("mlp-tanh-{}", widths.join("x"))
    }

    pub fn parse_name(name: &str) -> Result<Vec<usize>> {
        let widths = name
            .strip_prefix("mlp-tanh-")
            .ok_or_else(|| Error::invalid(format!("unknown architecture {name:?}")))?;
        widths
            .split('x')
            .map(|w| {
                w.parse::<usize>()
                    .ok()
                    .filter(|&w| w > 0)
                    .ok_or_else(|| Error::invalid(format!("bad layer width in {name:?}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    inp: usize,
    out: usize,
    off: usize,
}

impl Dense {
    fn size(&self) -> usize {
        self.out * self.inp + self.out
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &theta[self.off..self.off + self.out * self.inp];
        let b = &theta[self.off + self.out * self.inp..self.off + self.size()];
        (0..self.out)
            .map(|o| {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                row.iter().zip(x).fold(b[o], |acc, (wi, xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    fn backward(&self, theta: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let wn = self.out * self.inp;
        let mut dx = vec![0.0; self.inp];
        for o in 0..self.out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            let row = self.off + o * self.inp;
            for i in 0..self.inp {
                grad[row + i] += d * x[i];
                dx[i] += d * theta[row + i];
            }
            grad[self.off + wn + o] += d;
        }
        dx
    }
}

/// A stack of dense layers, tanh after each except optionally the last.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Tower {
    layers: Vec<Dense>,
    linear_last: bool,
}

impl Tower {
    fn build(widths: &[usize], linear_last: bool, off: &mut usize) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let d = Dense {
                    inp: w[0],
                    out: w[1],
                    off: *off,
                };
                *off += d.size();
                d
            })
            .collect();
        Self {
            layers,
            linear_last,
        }
    }

    fn activated(&self, i: usize) -> bool {
        !(self.linear_last && i + 1 == self.layers.len())
    }

    /// Returns the input followed by every layer's output.
    fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(theta, acts.last().unwrap());
            if self.activated(i) {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    fn backward(&self, theta: &[f64], acts: &[Vec<f64>], d_out: &[f64], grad: &mut [f64]) {
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(i) {
                for (d, a) in delta.iter_mut().zip(&acts[i + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = layer.backward(theta, &acts[i], &delta, grad);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    Ppo {
        trunk: Tower,
        policy_head: Dense,
        value_head: Dense,
        log_std: usize,
    },
    Mappo {
        actors: Vec<Tower>,
        critic: Tower,
        log_std: usize,
    },
}

impl Layout {
    fn build(arch: &Arch) -> (Self, usize) {
        let mut off = 0;
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        let top = *widths.last().unwrap();
        let layout = match arch.variant {
            Variant::Ppo => {
                let trunk = Tower::build(&widths, false, &mut off);
                let policy_head = Dense {
                    inp: top,
                    out: arch.k,
                    off,
                };
                off += policy_head.size();
                let log_std = off;
                off += arch.k;
                let value_head = Dense {
                    inp: top,
                    out: 1,
                    off,
                };
                off += value_head.size();
                Layout::Ppo {
                    trunk,
                    policy_head,
                    value_head,
                    log_std,
                }
            }
            Variant::Mappo => {
                let mut tower_widths = widths.clone();
                tower_widths.push(1);
                let actors = (0..arch.k)
                    .map(|_| Tower::build(&tower_widths, true, &mut off))
                    .collect();
                let log_std = off;
                off += arch.k;
                let critic = Tower::build(&tower_widths, true, &mut off);
                Layout::Mappo {
                    actors,
                    critic,
                    log_std,
                }
            }
        };
        (layout, off)
    }
}

/// Network outputs for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean_logits: Vec<f64>,
    pub log_stds: Vec<f64>,
    pub value: f64,
}

/// Gradient of a loss with respect to one [`PolicyOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub mean_logits: Vec<f64>,
    pub log_stds: Vec<f64>,
    pub value: f64,
}

impl OutputGrad {
    pub fn zeros(k: usize) -> Self {
        Self {
            mean_logits: vec![0.0; k],
            log_stds: vec![0.0; k],
            value: 0.0,
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    towers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    arch: Arch,
    layout: Layout,
    theta: Vec<f64>,
}

impl PolicyNet {
    /// All-zero parameters.
    pub fn zeros(arch: Arch) -> Self {
        let (layout, n) = Layout::build(&arch);
        Self {
            arch,
            layout,
            theta: vec![0.0; n],
        }
    }

    /// Orthogonal (gain 1) hidden layers, zero biases, zero output heads and
    /// log-stds of `ln 0.5`.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        let hidden_layers: Vec<Dense> = match &net.layout {
            Layout::Ppo { trunk, .. } => trunk.layers.clone(),
            Layout::Mappo { actors, critic, .. } => actors
                .iter()
                .chain(std::iter::once(critic))
                .flat_map(|t| t.layers[..t.layers.len() - 1].iter().copied())
                .collect(),
        };
        for d in hidden_layers {
            let w = orthogonal(d.out, d.inp, 1.0, rng);
            net.theta[d.off..d.off + d.out * d.inp].copy_from_slice(&w);
        }
        let ls = net.log_std_offset();
        let k = net.arch.k;
        net.theta[ls..ls + k].fill(0.5f64.ln());
        net
    }

    pub fn from_params(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch);
        if theta.len() != net.theta.len() {
            return Err(Error::invalid(format!(
                "{} parameters given, architecture {} needs {}",
                theta.len(),
                net.arch.name(),
                net.theta.len()
            )));
        }
        net.theta = theta;
        Ok(net)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn k(&self) -> usize {
        self.arch.k
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn log_std_offset(&self) -> usize {
        match &self.layout {
            Layout::Ppo { log_std, .. } | Layout::Mappo { log_std, .. } => *log_std,
        }
    }

    /// Copies the parameters of agent `k`'s actor tower of a MAPPO network
    /// into the trunk and head of a `K = 1` PPO network (and back), so both
    /// variants compute identical policy outputs.
    pub fn copy_actor_into(&self, agent: usize, ppo: &mut PolicyNet) -> Result<()> {
        let (
            Layout::Mappo {
                actors, log_std, ..
            },
            Layout::Ppo {
                trunk,
                policy_head,
                log_std: pls,
                ..
            },
        ) = (&self.layout, &ppo.layout)
        else {
            return Err(Error::invalid(
                "copy_actor_into needs a MAPPO source and PPO target",
            ));
        };
        if ppo.arch.k != 1
            || ppo.arch.hidden != self.arch.hidden
            || ppo.arch.input_dim != self.arch.input_dim
        {
            return Err(Error::invalid(
                "target must be a K=1 PPO network of matching shape",
            ));
        }
        let src = &actors[agent];
        let dst: Vec<Dense> = trunk
            .layers
            .iter()
            .copied()
            .chain(std::iter::once(*policy_head))
            .collect();
        for (s, d) in src.layers.iter().zip(dst) {
            ppo.theta[d.off..d.off + d.size()]
                .copy_from_slice(&self.theta[s.off..s.off + s.size()]);
        }
        ppo.theta[*pls] = self.theta[log_std + agent];
        Ok(())
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.arch.input_dim {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, network expects {}",
                features.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<PolicyOutput> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<(PolicyOutput, ForwardCache)> {
        self.check_input(features)?;
        let th = &self.theta;
        let k = self.arch.k;
        Ok(match &self.layout {
            Layout::Ppo {
                trunk,
                policy_head,
                value_head,
                log_std,
            } => {
                let acts = trunk.forward(th, features);
                let h = acts.last().unwrap();
                let out = PolicyOutput {
                    mean_logits: policy_head.forward(th, h),
                    log_stds: th[*log_std..log_std + k].to_vec(),
                    value: value_head.forward(th, h)[0],
                };
                (out, ForwardCache { towers: vec![acts] })
            }
            Layout::Mappo {
                actors,
                critic,
                log_std,
            } => {
                let mut towers: Vec<Vec<Vec<f64>>> =
                    actors.iter().map(|a| a.forward(th, features)).collect();
                let mean_logits = towers.iter().map(|acts| acts.last().unwrap()[0]).collect();
                let critic_acts = critic.forward(th, features);
                let value = critic_acts.last().unwrap()[0];
                towers.push(critic_acts);
                let out = PolicyOutput {
                    mean_logits,
                    log_stds: th[*log_std..log_std + k].to_vec(),
                    value,
                };
                (out, ForwardCache { towers })
            }
        })
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/d(outputs)` for one sample.
    pub fn backward(&self, cache: &ForwardCache, d: &OutputGrad, grad: &mut [f64]) {
        let th = &self.theta;
        let k = self.arch.k;
        match &self.layout {
            Layout::Ppo {
                trunk,
                policy_head,
                value_head,
                log_std,
            } => {
                let acts = &cache.towers[0];
                let h = acts.last().unwrap();
                let mut dh = policy_head.backward(th, h, &d.mean_logits, grad);
                let dv = value_head.backward(th, h, &[d.value], grad);
                dh.iter_mut().zip(dv).for_each(|(a, b)| *a += b);
                trunk.backward(th, acts, &dh, grad);
                for i in 0..k {
                    grad[log_std + i] += d.log_stds[i];
                }
            }
            Layout::Mappo {
                actors,
                critic,
                log_std,
            } => {
                for (i, actor) in actors.iter().enumerate() {
                    actor.backward(th, &cache.towers[i], &[d.mean_logits[i]], grad);
                }
                critic.backward(th, &cache.towers[k], &[d.value], grad);
                for i in 0..k {
                    grad[log_std + i] += d.log_stds[i];
                }
            }
        }
    }
}

/// An `out × in` matrix (row-major) with orthonormal rows or columns.
fn orthogonal<R: Rng + ?Sized>(out: usize, inp: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (r, c) = if out <= inp { (out, inp) } else { (inp, out) };
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| {
            (0..c)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = m.split_at_mut(i);
            tail[0]
                .iter_mut()
                .zip(&head[j])
                .for_each(|(a, b)| *a -= dot * b);
        }
        let norm = m[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        m[i].iter_mut().for_each(|a| *a /= norm);
    }
    let mut w = vec![0.0; out * inp];
    for o in 0..out {
        for i in 0..inp {
            w[o * inp + i] = gain * if out <= inp { m[o][i] } else { m[i][o] };
        }
    }
    w
}
