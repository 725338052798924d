//! Rollouts: full generations under a stochastic policy, scored at the end.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{
    generate, DecodeMode, Ensemble, FusionConfig, GenerationTrace, SpanRecord, WeightPolicy,
};
use crate::harness::Task;

/// Generation attempts per episode before it is dropped.
pub const MAX_ATTEMPTS: usize = 3;

/// Scores an episode. Only a terminal reward is used by default; the
/// per-span hook exists for denser reward schemes.
pub trait RewardFn: Sync {
    fn terminal(&self, task: &Task, output: &str) -> f64;

    fn intermediate(&self, _task: &Task, _span: &SpanRecord) -> f64 {
        0.0
    }
}

/// 1 for a whitespace-normalized exact match, else 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl RewardFn for ExactMatch {
    fn terminal(&self, task: &Task, output: &str) -> f64 {
        if task.is_correct(output) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action_logits: Vec<f64>,
    pub old_log_prob: f64,
    pub old_agent_log_probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    /// Weights used for the span, kept for statistics.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: Task,
    pub transitions: Vec<Transition>,
    pub terminal_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buffer {
    pub trajectories: Vec<Trajectory>,
    /// Episodes dropped after repeated generation failures.
    pub skipped: usize,
}

impl Buffer {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_terminal_reward(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories
            .iter()
            .map(|t| t.terminal_reward)
            .sum::<f64>()
            / self.len() as f64
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| &t.transitions)
    }
}

/// Converts a finished generation into transitions.
pub fn trajectory_from_trace(
    task: &Task,
    trace: &GenerationTrace,
    reward: &dyn RewardFn,
) -> Trajectory {
    let terminal = reward.terminal(task, &trace.text);
    let n = trace.spans.len();
    let transitions = trace
        .spans
        .iter()
        .enumerate()
        .filter_map(|(i, span)| {
            let a = span.action.as_ref()?;
            let last = i + 1 == n;
            Some(Transition {
                features: a.features.clone(),
                action_logits: a.logits.clone(),
                old_log_prob: a.log_prob,
                old_agent_log_probs: a.agent_log_probs.clone(),
                reward: reward.intermediate(task, span) + if last { terminal } else { 0.0 },
                value: a.value,
                done: last,
                weights: span.weights.clone(),
            })
        })
        .collect();
    Trajectory {
        task: task.clone(),
        transitions,
        terminal_reward: terminal,
    }
}

fn run_episode(
    policy: &dyn WeightPolicy,
    ensemble: &Ensemble,
    fusion: &FusionConfig,
    task: &Task,
    reward: &dyn RewardFn,
    rng: &mut ChaCha8Rng,
) -> Option<Trajectory> {
    for attempt in 1..=MAX_ATTEMPTS {
        match generate(
            &task.prompt,
            policy,
            ensemble,
            fusion,
            DecodeMode::Sample,
            rng,
        ) {
            Ok(trace) => return Some(trajectory_from_trace(task, &trace, reward)),
            Err(e) => log::warn!(
                "episode {:?} failed (attempt {attempt}/{MAX_ATTEMPTS}): {e}",
                task.prompt
            ),
        }
    }
    log::warn!(
        "dropping episode {:?} after {MAX_ATTEMPTS} failures",
        task.prompt
    );
    None
}

/// Runs `n_episodes` sampled generations on tasks drawn uniformly from
/// `tasks`. Episodes are split into contiguous chunks over `workers`
/// threads, each with its own rng seeded from `rng` and its worker index,
/// so the result depends only on the rng state and the worker count.
pub fn collect<R: RngCore>(
    policy: &dyn WeightPolicy,
    ensemble: &Ensemble,
    fusion: &FusionConfig,
    tasks: &[Task],
    n_episodes: usize,
    reward: &dyn RewardFn,
    workers: usize,
    rng: &mut R,
) -> Buffer {
    if n_episodes == 0 || tasks.is_empty() {
        return Buffer::default();
    }
    let picks: Vec<usize> = (0..n_episodes)
        .map(|_| rng.random_range(0..tasks.len()))
        .collect();
    let base_seed = rng.next_u64();
    let workers = workers.clamp(1, n_episodes);
    let chunk = n_episodes.div_ceil(workers);

    let run_chunk = |w: usize, picks: &[usize]| -> Vec<Option<Trajectory>> {
        let mut wrng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(w as u64));
        picks
            .iter()
            .map(|&i| run_episode(policy, ensemble, fusion, &tasks[i], reward, &mut wrng))
            .collect()
    };

    let results: Vec<Option<Trajectory>> = if workers == 1 {
        run_chunk(0, &picks)
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = picks
                .chunks(chunk)
                .enumerate()
                .map(|(w, c)| s.spawn(move || run_chunk(w, c)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("rollout worker panicked"))
                .collect()
        })
    };
    let skipped = results.iter().filter(|r| r.is_none()).count();
    Buffer {
        trajectories: results.into_iter().flatten().collect(),
        skipped,
    }
}
