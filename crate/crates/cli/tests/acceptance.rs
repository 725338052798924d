//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! if any fails. Each check compares the library against an oracle written
//! here, independently of the library code.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlae_core::agent::{Arch, PolicyNet, PolicyOutput, Variant};
use rlae_core::backends::{Backend, Expertise, NgramModel, Query, ScriptedExpert, Tokenizer};
use rlae_core::baselines::UniformPolicy;
use rlae_core::fusion::{fuse, Ensemble, EnsembleWeights, FusionConfig};
use rlae_core::harness::{
    evaluate, generalization_run, make_suite, span_ablation, Experiment, Family, Task,
};
use rlae_core::logit_server::{LogitServer, RemoteBackend};
use rlae_core::trainer::{
    clipped_surrogate, gae, mappo_loss, minibatch_gradient, ppo_loss, CombinedLoss, RLConfig,
    Sample,
};
use rlae_core::vocab::{project, Projection, TokenDistribution};
use rlae_core::EOS;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < budget, || {
        format!("{what} took {t:.2?}, budget {budget:?}")
    })
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

fn fusion_matches_weighted_sum() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=5);
        let v = rng.random_range(1..=256);
        let dists: Vec<Vec<f64>> = (0..k).map(|_| random_dist(&mut rng, v)).collect();
        let w = random_dist(&mut rng, k);
        let td: Vec<TokenDistribution> = dists
            .iter()
            .map(|d| TokenDistribution::new(d.clone()).unwrap())
            .collect();
        let fused =
            fuse(&td, &EnsembleWeights::new(w.clone()).unwrap()).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        for i in 0..v {
            let mut expect = 0.0;
            for j in 0..k {
                expect += w[j] * dists[j][i];
            }
            worst = worst.max((fused.prob(i) - expect).abs());
            total += fused.prob(i);
        }
        ensure((total - 1.0).abs() <= 1e-9, || {
            format!("fused mass {total}")
        })?;
    }
    ensure(worst <= 1e-15, || format!("max deviation {worst:e}"))?;
    within(start, Duration::from_secs(10), "10k fuse calls")?;
    Ok(format!("max |Δ| {worst:e}, {:.2?}", start.elapsed()))
}

fn projection_preserves_mass() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let local = rng.random_range(1..=128);
        let unified = local + rng.random_range(0..=128);
        let mut slots: Vec<usize> = (0..unified).collect();
        for i in 0..local {
            let j = rng.random_range(i..unified);
            slots.swap(i, j);
        }
        slots.truncate(local);
        let p = random_dist(&mut rng, local);
        let proj = Projection::from_indices(0, slots.clone()).map_err(|e| e.to_string())?;
        let out = project(&TokenDistribution::new(p.clone()).unwrap(), &proj, unified)
            .map_err(|e| e.to_string())?;
        let mut expect = vec![0.0; unified];
        for (i, &u) in slots.iter().enumerate() {
            expect[u] = p[i];
        }
        ensure(out.probs() == expect.as_slice(), || {
            "projection differs from scatter".into()
        })?;
        worst = worst.max((out.probs().iter().sum::<f64>() - p.iter().sum::<f64>()).abs());
    }
    ensure(worst <= 1e-12, || format!("mass changed by {worst:e}"))?;
    within(start, Duration::from_secs(10), "10k project calls")?;
    Ok(format!(
        "max mass change {worst:e}, {:.2?}",
        start.elapsed()
    ))
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}` summed directly.
fn gae_double_sum(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            (t..n)
                .map(|j| {
                    let next = if j + 1 < n { v[j + 1] } else { 0.0 };
                    (gamma * lambda).powi((j - t) as i32) * (r[j] + gamma * next - v[j])
                })
                .sum()
        })
        .collect()
}

fn gae_matches_double_sum() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, l) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let a = gae(&r, &v, 0.0, g, l).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(gae_double_sum(&r, &v, g, l)) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let a = gae(&[0.0, 1.0], &[0.5, 0.2], 0.0, 0.99, 0.95).map_err(|e| e.to_string())?;
    let oracle = gae_double_sum(&[0.0, 1.0], &[0.5, 0.2], 0.99, 0.95);
    ensure(
        (a[0] - oracle[0]).abs() <= 1e-12 && (a[1] - oracle[1]).abs() <= 1e-12,
        || format!("{a:?} vs {oracle:?}"),
    )?;
    ensure(
        format!("{:.4}", a[0]) == "0.4504" && (a[1] - 0.8).abs() <= 1e-12,
        || format!("worked example gave {a:?}"),
    )?;
    Ok(format!(
        "max |Δ| {worst:e}; worked example A = [{:.6}, {:.6}]",
        a[0], a[1]
    ))
}

fn clip_branch_table() -> Result<String, String> {
    let a = clipped_surrogate(1.5, 1.0, 0.2);
    let b = clipped_surrogate(0.5, -1.0, 0.2);
    ensure(a == 1.2 && b == -0.8, || format!("got {a}, {b}"))?;
    Ok(format!("(1.5, 1, 0.2) -> {a}, (0.5, -1, 0.2) -> {b}"))
}

fn random_net(rng: &mut ChaCha8Rng, variant: Variant, d: usize, k: usize) -> PolicyNet {
    let arch = Arch::new(variant, d, k);
    let n = PolicyNet::zeros(arch.clone()).num_params();
    let theta = (0..n).map(|_| rng.random_range(-0.25..0.25)).collect();
    PolicyNet::from_params(arch, theta).unwrap()
}

fn random_samples(rng: &mut ChaCha8Rng, net: &PolicyNet, n: usize) -> Vec<Sample> {
    let (d, k) = (net.input_dim(), net.k());
    (0..n)
        .map(|_| {
            let features: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = net.forward(&features).unwrap();
            let logits: Vec<f64> = (0..k)
                .map(|i| out.mean_logits[i] + rng.random_range(-1.0..1.0))
                .collect();
            // old policy a little off the current one, so both clip branches occur
            let agent: Vec<f64> = (0..k)
                .map(|i| {
                    let s = out.log_stds[i].exp();
                    let z = (logits[i] - out.mean_logits[i]) / s;
                    -0.5 * z * z - out.log_stds[i] - 0.5 * (2.0 * std::f64::consts::PI).ln()
                        + rng.random_range(-0.4..0.4)
                })
                .collect();
            Sample {
                features,
                logits,
                old_log_prob: agent.iter().sum(),
                old_agent_log_probs: agent,
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

fn gradients_match_finite_differences() -> Result<String, String> {
    const H: f64 = 1e-5;
    const COORDS: usize = 120;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for draw in 0..120 {
        let variant = if draw % 2 == 0 {
            Variant::Ppo
        } else {
            Variant::Mappo
        };
        let k = rng.random_range(2..=3);
        let d = rng.random_range(4..=12);
        let mut net = random_net(&mut rng, variant, d, k);
        let samples = random_samples(&mut rng, &net, 8);
        let loss = CombinedLoss {
            variant,
            samples: &samples,
            epsilon: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
        };
        let (_, g) = minibatch_gradient(&net, &loss).map_err(|e| e.to_string())?;
        let total = |n: &PolicyNet| -> f64 {
            let outs: Vec<PolicyOutput> = samples
                .iter()
                .map(|s| n.forward(&s.features).unwrap())
                .collect();
            loss.breakdown(&outs).unwrap().0.total
        };
        let n_params = net.num_params();
        // every log-std parameter (found as the ones that move the
        // input-independent log-stds) plus a random subset of the rest
        let probe = vec![0.0; d];
        let base = net.forward(&probe).unwrap().log_stds;
        let mut coords: Vec<usize> = (0..n_params)
            .filter(|&i| {
                let mut n = net.clone();
                n.params_mut()[i] += 1.0;
                n.forward(&probe).unwrap().log_stds != base
            })
            .collect();
        ensure(coords.len() == k, || {
            format!("found {} log-std parameters for K={k}", coords.len())
        })?;
        coords.extend((0..COORDS).map(|_| rng.random_range(0..n_params)));
        for i in coords {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + H;
            let up = total(&net);
            net.params_mut()[i] = orig - H;
            let dn = total(&net);
            net.params_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * H);
            let scale = g[i].abs().max(fd.abs());
            if scale < 1e-6 {
                // below the roundoff floor of the difference quotient
                ensure((g[i] - fd).abs() < 1e-9, || {
                    format!("draw {draw} param {i}: {} vs {fd}", g[i])
                })?;
                continue;
            }
            let rel = (g[i] - fd).abs() / scale;
            worst = worst.max(rel);
            checked += 1;
            ensure(rel <= 1e-4, || {
                format!(
                    "draw {draw} ({variant}) param {i}: analytic {} fd {fd} rel {rel:e}",
                    g[i]
                )
            })?;
        }
    }
    within(start, Duration::from_secs(60), "gradient check")?;
    Ok(format!(
        "120 draws, {checked} coordinates, max rel err {worst:e}, {:.2?}",
        start.elapsed()
    ))
}

fn mappo_single_agent_is_ppo() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for batch in 0..100 {
        let d = rng.random_range(3..=10);
        let mappo = random_net(&mut rng, Variant::Mappo, d, 1);
        let mut ppo = PolicyNet::zeros(Arch::new(Variant::Ppo, d, 1));
        mappo
            .copy_actor_into(0, &mut ppo)
            .map_err(|e| e.to_string())?;
        let n = rng.random_range(1..=32);
        let samples = random_samples(&mut rng, &mappo, n);
        let om: Vec<PolicyOutput> = samples
            .iter()
            .map(|s| mappo.forward(&s.features).unwrap())
            .collect();
        let op: Vec<PolicyOutput> = samples
            .iter()
            .map(|s| ppo.forward(&s.features).unwrap())
            .collect();
        for (a, b) in om.iter().zip(&op) {
            ensure(
                a.mean_logits == b.mean_logits && a.log_stds == b.log_stds,
                || format!("batch {batch}: actor outputs differ"),
            )?;
        }
        let (lm, gm) = mappo_loss(&om, &samples, 0.2, 0.01).map_err(|e| e.to_string())?;
        let (lp, gp) = ppo_loss(&om, &samples, 0.2, 0.01).map_err(|e| e.to_string())?;
        ensure(lm.loss.to_bits() == lp.loss.to_bits(), || {
            format!("batch {batch}: {} vs {}", lm.loss, lp.loss)
        })?;
        ensure(
            lm.surrogate.to_bits() == lp.surrogate.to_bits()
                && lm.entropy.to_bits() == lp.entropy.to_bits(),
            || format!("batch {batch}: components differ"),
        )?;
        for (a, b) in gm.iter().zip(&gp) {
            ensure(
                a.mean_logits == b.mean_logits && a.log_stds == b.log_stds,
                || format!("batch {batch}: gradients differ"),
            )?;
        }
        let (lq, _) = ppo_loss(&op, &samples, 0.2, 0.01).map_err(|e| e.to_string())?;
        ensure(lq.loss.to_bits() == lp.loss.to_bits(), || {
            format!("batch {batch}: copied PPO net loss differs")
        })?;
    }
    Ok("100 batches bitwise equal".into())
}

/// Greedy decoding of a task with the two scripted experts mixed by `w`,
/// written against the backends directly: distributions are merged by token
/// string and ties go to the token seen first (expert 0's order, then expert 1's).
fn oracle_decode(experts: &[&dyn Backend], w: &[f64], prompt: &str, max_tokens: usize) -> String {
    let mut out: Vec<String> = Vec::new();
    while out.len() < max_tokens {
        let ctx = std::iter::once(prompt.to_owned())
            .chain(out.iter().cloned())
            .collect::<Vec<_>>()
            .join(" ");
        let mut merged: Vec<(String, f64)> = Vec::new();
        for (e, &wk) in experts.iter().zip(w) {
            let p = e.next_distribution(&Query::new(ctx.clone())).unwrap();
            for (id, tok) in e.vocab().tokens().iter().enumerate() {
                match merged.iter_mut().find(|(t, _)| t == tok) {
                    Some(slot) => slot.1 += wk * p.dist.prob(id),
                    None => merged.push((tok.clone(), wk * p.dist.prob(id))),
                }
            }
        }
        let mut best = 0;
        for (i, (_, p)) in merged.iter().enumerate() {
            if *p > merged[best].1 {
                best = i;
            }
        }
        let tok = merged[best].0.clone();
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    out.join(" ")
}

fn oracle_accuracy(experts: &[&dyn Backend], w: &[f64], suite: &[Task]) -> f64 {
    let hits = suite
        .iter()
        .filter(|t| oracle_decode(experts, w, &t.prompt, 16) == t.answer)
        .count();
    hits as f64 / suite.len() as f64
}

fn two_experts() -> Ensemble {
    Ensemble::new(vec![
        Box::new(ScriptedExpert::new(Expertise::Math)),
        Box::new(ScriptedExpert::new(Expertise::Text)),
    ])
    .unwrap()
}

fn experiment(variant: Variant) -> Experiment {
    Experiment {
        rl: RLConfig::default(),
        variant,
        fusion: FusionConfig::default(),
        train_n: 256,
        eval_n: 200,
        seed: 0,
    }
}

fn routing_beats_fixed_weighting() -> Result<String, String> {
    let suite = make_suite(Family::Mixed, 200, 0).map_err(|e| e.to_string())?;
    let fusion = FusionConfig::default();
    let math = ScriptedExpert::new(Expertise::Math);
    let text = ScriptedExpert::new(Expertise::Text);
    let mut line = Vec::new();
    for e in [Expertise::Math, Expertise::Text] {
        let solo = ScriptedExpert::new(e);
        let oracle = oracle_accuracy(&[&solo], &[1.0], &suite);
        let ens = Ensemble::new(vec![Box::new(ScriptedExpert::new(e))]).unwrap();
        let acc = evaluate(&UniformPolicy, &ens, &suite, &fusion)
            .map_err(|e| e.to_string())?
            .report
            .accuracy;
        ensure(acc == oracle, || {
            format!("expert {e:?}: {acc} vs oracle {oracle}")
        })?;
        ensure((acc - 0.5).abs() <= 0.05, || {
            format!("expert {e:?} scores {acc}")
        })?;
        line.push(format!("{}-only {acc:.3}", e.tag()));
    }
    let ens = two_experts();
    let uniform_oracle = oracle_accuracy(&[&math, &text], &[0.5, 0.5], &suite);
    let uniform = evaluate(&UniformPolicy, &ens, &suite, &fusion)
        .map_err(|e| e.to_string())?
        .report
        .accuracy;
    ensure(uniform == uniform_oracle, || {
        format!("uniform {uniform} vs oracle {uniform_oracle}")
    })?;
    ensure(uniform < 0.8, || format!("uniform scores {uniform}"))?;
    line.push(format!("uniform {uniform:.3}"));
    for variant in [Variant::Ppo, Variant::Mappo] {
        let start = Instant::now();
        let exp = experiment(variant);
        ensure(exp.rl.iterations <= 200, || {
            "iteration budget above 200".into()
        })?;
        let policy = exp
            .train_on(&ens, Family::Mixed)
            .map_err(|e| e.to_string())?;
        let acc = exp
            .eval_on(&policy, &ens, Family::Mixed)
            .map_err(|e| e.to_string())?
            .accuracy;
        ensure(acc >= 0.95, || format!("{variant} reaches {acc}"))?;
        line.push(format!("{variant} {acc:.3} ({:.1?})", start.elapsed()));
    }
    Ok(line.join(", "))
}

fn generalization_drop_is_small() -> Result<String, String> {
    let ens = two_experts();
    let exp = experiment(Variant::Ppo);
    let near =
        generalization_run(&exp, &ens, Family::Math, Family::MathSub).map_err(|e| e.to_string())?;
    let far =
        generalization_run(&exp, &ens, Family::Math, Family::Text).map_err(|e| e.to_string())?;
    ensure(near.drop <= 0.05, || {
        format!("addition -> subtraction drop {}", near.drop)
    })?;
    ensure(far.drop > near.drop, || {
        format!("negative control drop {} not above {}", far.drop, near.drop)
    })?;
    Ok(format!(
        "math -> math-sub drop {:.3} ({:.3} vs {:.3}); math -> text drop {:.3}",
        near.drop, near.acc_transfer, near.acc_direct, far.drop
    ))
}

fn span_decisions_scale_with_length() -> Result<String, String> {
    let lengths = [1, 2, 4, 8, 16];
    let fusion = FusionConfig::default();
    let suite = make_suite(Family::Mixed, 40, 0).map_err(|e| e.to_string())?;
    for &l in &lengths {
        let cfg = FusionConfig {
            span_length: l,
            ..fusion.clone()
        };
        let ev =
            evaluate(&UniformPolicy, &two_experts(), &suite, &cfg).map_err(|e| e.to_string())?;
        for (_, t) in &ev.traces {
            ensure(t.agent_invocations == t.token_count.div_ceil(l), || {
                format!(
                    "L={l}: {} invocations for H={}",
                    t.agent_invocations, t.token_count
                )
            })?;
        }
    }

    // n-gram models never emit the end token, so every response runs to H_max
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = ["a", "b", "c", "d", "e", "f"];
    let corpus = |rng: &mut ChaCha8Rng| {
        (0..300)
            .map(|_| words[rng.random_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let ngrams = Ensemble::new(vec![
        Box::new(
            NgramModel::train(&corpus(&mut rng), 1, None, 1.0, Tokenizer::Whitespace).unwrap(),
        ),
        Box::new(
            NgramModel::train(&corpus(&mut rng), 2, None, 1.0, Tokenizer::Whitespace).unwrap(),
        ),
    ])
    .unwrap();
    let prompts = make_suite(Family::Text, 10, 0).map_err(|e| e.to_string())?;
    let rows = span_ablation(&UniformPolicy, &ngrams, &prompts, &fusion, &lengths)
        .map_err(|e| e.to_string())?;
    let counts: Vec<usize> = rows.iter().map(|r| r.agent_invocations).collect();
    ensure(rows.iter().all(|r| r.tokens == 16 * prompts.len()), || {
        "responses did not run to H_max".into()
    })?;
    for (r, &l) in rows.iter().zip(&lengths) {
        ensure(r.agent_invocations * l == counts[0], || {
            format!("invocations {counts:?} not in ratio 1/L")
        })?;
    }
    Ok(format!(
        "⌈H/L⌉ on every trace; invocations at L=1..16: {counts:?}"
    ))
}

fn remote_equals_local() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let corpus: Vec<&str> = (0..400)
        .map(|_| words[rng.random_range(0..words.len())].as_str())
        .collect();
    let local: Arc<dyn Backend> = Arc::new(
        NgramModel::train(&corpus.join(" "), 2, None, 0.5, Tokenizer::Whitespace).unwrap(),
    );
    let expert: Arc<dyn Backend> = Arc::new(ScriptedExpert::new(Expertise::Math));
    let mut total = 0;
    for (backend, n) in [(local, 7000), (expert, 3000)] {
        let server =
            LogitServer::bind(backend.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
        let addr = server.local_addr().map_err(|e| e.to_string())?.to_string();
        let (handle, join) = server.spawn().map_err(|e| e.to_string())?;
        let remote = RemoteBackend::connect(&addr, Duration::from_secs(5), backend.tokenizer())
            .map_err(|e| e.to_string())?;
        ensure(remote.vocab() == backend.vocab(), || {
            "vocabularies differ".into()
        })?;
        let toks = backend.vocab().tokens().to_vec();
        for q in 0..n {
            let len = rng.random_range(0..6);
            let ctx = (0..len)
                .map(|_| toks[rng.random_range(0..toks.len())].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let a = backend
                .next_distribution(&Query::new(ctx.clone()))
                .map_err(|e| e.to_string())?;
            let b = remote
                .next_distribution(&Query::new(ctx.clone()))
                .map_err(|e| e.to_string())?;
            let same = a.fallback == b.fallback
                && a.dist.probs().len() == b.dist.probs().len()
                && a.dist
                    .probs()
                    .iter()
                    .zip(b.dist.probs())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("query {q} ({ctx:?}) differs"))?;
        }
        drop(remote);
        handle.shutdown();
        join.join()
            .map_err(|_| "server thread panicked".to_string())?
            .map_err(|e| e.to_string())?;
        total += n;
    }
    Ok(format!("{total} queries bitwise equal"))
}

fn run_pipeline(dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let bin = env!("CARGO_BIN_EXE_rlae");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin)
            .args(args)
            .env("RLAE_SEED", "0")
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!(
                "rlae {args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            )
        })
    };
    let out = dir.join("run");
    let report = dir.join("report.json");
    run(&[
        "train",
        "--algo",
        "ppo",
        "--iterations",
        "30",
        "--out",
        out.to_str().unwrap(),
    ])?;
    run(&[
        "eval",
        "--ckpt",
        out.join("final.rlae").to_str().unwrap(),
        "--suite",
        "mixed",
        "--n",
        "200",
        "--out",
        report.to_str().unwrap(),
    ])?;
    let csv = std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?;
    let json = std::fs::read(&report).map_err(|e| e.to_string())?;
    Ok((csv, json))
}

fn cli_runs_are_reproducible() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (csv_a, json_a) = run_pipeline(a.path())?;
    let (csv_b, json_b) = run_pipeline(b.path())?;
    ensure(csv_a == csv_b, || "metrics.csv differs between runs".into())?;
    ensure(json_a == json_b, || {
        "report.json differs between runs".into()
    })?;
    ensure(
        csv_a
            .split(|&c| c == b'\n')
            .filter(|l| !l.is_empty())
            .count()
            == 31,
        || "expected 30 metric rows".into(),
    )?;
    Ok(format!(
        "metrics.csv ({} bytes) and report.json ({} bytes) identical",
        csv_a.len(),
        json_a.len()
    ))
}

fn main() {
    let checks: [(&str, Check); 11] = [
        (
            "fusion matches weighted-sum oracle",
            fusion_matches_weighted_sum,
        ),
        ("projection preserves mass", projection_preserves_mass),
        ("gae equals double-sum oracle", gae_matches_double_sum),
        ("clip branch table", clip_branch_table),
        (
            "combined-loss gradients match finite differences",
            gradients_match_finite_differences,
        ),
        (
            "single-agent mappo equals ppo bitwise",
            mappo_single_agent_is_ppo,
        ),
        (
            "learned routing beats fixed weighting on mixed suite",
            routing_beats_fixed_weighting,
        ),
        (
            "addition-to-subtraction transfer drop",
            generalization_drop_is_small,
        ),
        (
            "agent invocations scale as 1/L",
            span_decisions_scale_with_length,
        ),
        (
            "remote backend equals in-process backend",
            remote_equals_local,
        ),
        (
            "train + eval reproducible under RLAE_SEED=0",
            cli_runs_are_reproducible,
        ),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
