//! Evaluation on synthetic suites and the experiments built on it:
//! transfer between task families, span-length ablation and weight traces.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Variant;
use crate::fusion::{
    generate, write_trace_jsonl, DecodeMode, Ensemble, FusionConfig, GenerationTrace, WeightPolicy,
};
use crate::trainer::{train, RLConfig};
use crate::{Error, Result};

mod tasks;

pub use tasks::{make_suite, normalize_whitespace, Family, Task};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean span weights per backend.
    pub mean_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Total tokens generated, including end tokens.
    pub tokens: usize,
    pub agent_invocations: usize,
    pub agent_invocations_per_token: f64,
    pub backend_calls: u64,
    /// Generations that failed and were scored incorrect.
    pub failures: usize,
    pub per_family: BTreeMap<Family, FamilyReport>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub traces: Vec<(Task, GenerationTrace)>,
    pub wall_time: std::time::Duration,
}

/// Greedy-decodes every task and scores exact matches.
pub fn evaluate(
    policy: &dyn WeightPolicy,
    ensemble: &Ensemble,
    suite: &[Task],
    fusion: &FusionConfig,
) -> Result<Evaluation> {
    if suite.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty suite"));
    }
    let start = std::time::Instant::now();
    let calls_before = ensemble.backend_calls();
    let config = fusion.with_mode(DecodeMode::Greedy);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut traces = Vec::with_capacity(suite.len());
    let mut failed = Vec::with_capacity(suite.len());
    for task in suite {
        let trace = match generate(
            &task.prompt,
            policy,
            ensemble,
            &config,
            DecodeMode::Greedy,
            &mut rng,
        ) {
            Ok(t) => t,
            Err(Error::Generation { source, partial }) => {
                log::warn!("generation failed for {:?}: {source}", task.prompt);
                failed.push(true);
                traces.push((task.clone(), *partial));
                continue;
            }
            Err(e) => return Err(e),
        };
        failed.push(false);
        traces.push((task.clone(), trace));
    }
    let failures = failed.iter().filter(|&&f| f).count();

    let k = ensemble.k();
    let mut per_family: BTreeMap<Family, (FamilyReport, usize)> = BTreeMap::new();
    let (mut correct, mut tokens, mut invocations) = (0, 0, 0);
    for ((task, trace), &fail) in traces.iter().zip(&failed) {
        let hit = !fail && task.is_correct(&trace.text);
        correct += hit as usize;
        tokens += trace.token_count;
        invocations += trace.agent_invocations;
        let (fam, spans) = per_family.entry(task.family).or_insert_with(|| {
            (
                FamilyReport {
                    n: 0,
                    correct: 0,
                    accuracy: 0.0,
                    mean_weights: vec![0.0; k],
                },
                0,
            )
        });
        fam.n += 1;
        fam.correct += hit as usize;
        for s in &trace.spans {
            fam.mean_weights
                .iter_mut()
                .zip(&s.weights)
                .for_each(|(m, w)| *m += w);
            *spans += 1;
        }
    }
    let per_family = per_family
        .into_iter()
        .map(|(f, (mut r, spans))| {
            r.accuracy = r.correct as f64 / r.n as f64;
            if spans > 0 {
                r.mean_weights.iter_mut().for_each(|m| *m /= spans as f64);
            }
            (f, r)
        })
        .collect();
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n: suite.len(),
        correct,
        accuracy: correct as f64 / suite.len() as f64,
        tokens,
        agent_invocations: invocations,
        agent_invocations_per_token: if tokens > 0 {
            invocations as f64 / tokens as f64
        } else {
            0.0
        },
        backend_calls: ensemble.backend_calls() - calls_before,
        failures,
        per_family,
    };
    Ok(Evaluation {
        report,
        traces,
        wall_time: start.elapsed(),
    })
}

/// Everything needed to train and evaluate a policy on generated suites.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub rl: RLConfig,
    pub variant: Variant,
    pub fusion: FusionConfig,
    pub train_n: usize,
    pub eval_n: usize,
    /// Evaluation suites use this seed, training suites `seed + 1`.
    pub seed: u64,
}

impl Experiment {
    /// Trains on `family` and returns the evaluation-mode policy.
    pub fn train_on(&self, ensemble: &Ensemble, family: Family) -> Result<crate::agent::RlPolicy> {
        let tasks = make_suite(family, self.train_n, self.seed.wrapping_add(1))?;
        let out = train(
            &self.rl,
            self.variant,
            ensemble,
            &self.fusion,
            &tasks,
            &mut |_, _| Ok(()),
        )?;
        if let Some(reason) = out.aborted {
            return Err(Error::Numeric(reason));
        }
        Ok(out.policy.stochastic(false))
    }

    pub fn eval_on(
        &self,
        policy: &dyn WeightPolicy,
        ensemble: &Ensemble,
        family: Family,
    ) -> Result<EvalReport> {
        let suite = make_suite(family, self.eval_n, self.seed)?;
        Ok(evaluate(policy, ensemble, &suite, &self.fusion)?.report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub acc_transfer: f64,
    pub acc_direct: f64,
    /// `acc_direct − acc_transfer`
    pub drop: f64,
}

/// Accuracy on `eval_family` of a policy trained on `train_family`, against
/// one trained on `eval_family` directly.
pub fn generalization_run(
    exp: &Experiment,
    ensemble: &Ensemble,
    train_family: Family,
    eval_family: Family,
) -> Result<Transfer> {
    let transferred = exp.train_on(ensemble, train_family)?;
    let acc_transfer = exp.eval_on(&transferred, ensemble, eval_family)?.accuracy;
    let acc_direct = if train_family == eval_family {
        acc_transfer
    } else {
        let direct = exp.train_on(ensemble, eval_family)?;
        exp.eval_on(&direct, ensemble, eval_family)?.accuracy
    };
    Ok(Transfer {
        acc_transfer,
        acc_direct,
        drop: acc_direct - acc_transfer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub span_length: usize,
    pub accuracy: f64,
    pub tokens: usize,
    pub agent_invocations: usize,
    pub invocations_per_token: f64,
    pub backend_calls: u64,
}

pub const DEFAULT_SPAN_LENGTHS: [usize; 5] = [1, 2, 4, 8, 16];

/// Evaluates `policy` on `suite` once per span length.
pub fn span_ablation(
    policy: &dyn WeightPolicy,
    ensemble: &Ensemble,
    suite: &[Task],
    fusion: &FusionConfig,
    lengths: &[usize],
) -> Result<Vec<AblationRow>> {
    lengths
        .iter()
        .map(|&l| {
            let cfg = FusionConfig {
                span_length: l,
                ..fusion.clone()
            };
            let r = evaluate(policy, ensemble, suite, &cfg)?.report;
            Ok(AblationRow {
                span_length: l,
                accuracy: r.accuracy,
                tokens: r.tokens,
                agent_invocations: r.agent_invocations,
                invocations_per_token: r.agent_invocations_per_token,
                backend_calls: r.backend_calls,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "span_length,accuracy,tokens,agent_invocations,invocations_per_token,backend_calls"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.span_length,
            r.accuracy,
            r.tokens,
            r.agent_invocations,
            r.invocations_per_token,
            r.backend_calls
        )?;
    }
    Ok(())
}

/// Writes the span records of `traces` as JSON lines to `path`, and the mean
/// span weights per family to a CSV next to it (same stem, `.csv`). Returns
/// the CSV path.
pub fn dump_weight_traces(traces: &[(Task, GenerationTrace)], path: &Path) -> Result<PathBuf> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to dump"));
    }
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace_jsonl(traces.iter().map(|(_, t)| t), &mut jsonl)?;
    jsonl.flush()?;

    let k = traces
        .iter()
        .flat_map(|(_, t)| t.spans.first())
        .map(|s| s.weights.len())
        .next()
        .unwrap_or(0);
    let mut sums: BTreeMap<Family, (Vec<f64>, usize)> = BTreeMap::new();
    for (task, trace) in traces {
        let (sum, n) = sums.entry(task.family).or_insert_with(|| (vec![0.0; k], 0));
        for s in &trace.spans {
            sum.iter_mut().zip(&s.weights).for_each(|(a, w)| *a += w);
            *n += 1;
        }
    }
    let csv_path = path.with_extension("csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    let cols: Vec<String> = (0..k).map(|i| format!("w{i}")).collect();
    writeln!(csv, "family,spans,{}", cols.join(","))?;
    for (fam, (sum, n)) in sums {
        let means: Vec<String> = sum
            .iter()
            .map(|s| {
                if n > 0 {
                    (s / n as f64).to_string()
                } else {
                    "0".into()
                }
            })
            .collect();
        writeln!(csv, "{fam},{n},{}", means.join(","))?;
    }
    csv.flush()?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Expertise, ScriptedExpert};
    use crate::baselines::UniformPolicy;
    use crate::fusion::{EnsembleWeights, FixedPolicy};

    fn experts() -> Ensemble {
        Ensemble::new(vec![
            Box::new(ScriptedExpert::new(Expertise::Math)),
            Box::new(ScriptedExpert::new(Expertise::Text)),
        ])
        .unwrap()
    }

    #[test]
    fn lone_expert_solves_its_family() {
        let ens = Ensemble::new(vec![Box::new(ScriptedExpert::new(Expertise::Math))]).unwrap();
        let suite = make_suite(Family::Math, 50, 3).unwrap();
        let r = evaluate(
            &FixedPolicy(EnsembleWeights::uniform(1)),
            &ens,
            &suite,
            &FusionConfig::default(),
        )
        .unwrap()
        .report;
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.agent_invocations, 50);
        assert_eq!(r.tokens, 100);
        assert_eq!(r.agent_invocations_per_token, 0.5);
    }

    #[test]
    fn single_expert_on_mixed_gets_its_half() {
        let ens = experts();
        let suite = make_suite(Family::Mixed, 40, 0).unwrap();
        for i in 0..2 {
            let r = evaluate(
                &FixedPolicy(EnsembleWeights::one_hot(2, i)),
                &ens,
                &suite,
                &FusionConfig::default(),
            )
            .unwrap()
            .report;
            assert_eq!(r.accuracy, 0.5);
            let fam = if i == 0 { Family::Math } else { Family::Text };
            assert_eq!(r.per_family[&fam].accuracy, 1.0);
        }
    }

    #[test]
    fn report_json_is_stable() {
        let ens = experts();
        let suite = make_suite(Family::Mixed, 10, 0).unwrap();
        let a = evaluate(&UniformPolicy, &ens, &suite, &FusionConfig::default())
            .unwrap()
            .report;
        let b = evaluate(&UniformPolicy, &ens, &suite, &FusionConfig::default())
            .unwrap()
            .report;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert!(json["per_family"]["math"]["mean_weights"].is_array());
    }

    #[test]
    fn empty_suite_rejected() {
        assert!(evaluate(&UniformPolicy, &experts(), &[], &FusionConfig::default()).is_err());
    }

    #[test]
    fn ablation_limits() {
        let ens = experts();
        let suite = make_suite(Family::Mixed, 6, 0).unwrap();
        let rows = span_ablation(
            &UniformPolicy,
            &ens,
            &suite,
            &FusionConfig::default(),
            &[1, 16],
        )
        .unwrap();
        assert_eq!(rows[0].agent_invocations, rows[0].tokens);
        assert_eq!(rows[1].agent_invocations, 6);
    }

    #[test]
    fn dump_writes_lines_and_family_means() {
        let dir = tempfile::tempdir().unwrap();
        let ens = experts();
        let suite = make_suite(Family::Mixed, 4, 0).unwrap();
        let ev = evaluate(
            &FixedPolicy(EnsembleWeights::new(vec![0.75, 0.25]).unwrap()),
            &ens,
            &suite,
            &FusionConfig::default(),
        )
        .unwrap();
        let path = dir.path().join("weights.jsonl");
        let csv = dump_weight_traces(&ev.traces, &path).unwrap();
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 4);
        for l in lines.lines() {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert_eq!(v["weights"].as_array().unwrap().len(), 2);
        }
        assert_eq!(
            std::fs::read_to_string(csv).unwrap(),
            "family,spans,w0,w1\nmath,2,0.75,0.25\ntext,2,0.75,0.25\n"
        );
        assert!(dump_weight_traces(&[], &path).is_err());
        assert!(dump_weight_traces(&ev.traces, &dir.path().join("missing/dir/w.jsonl")).is_err());
    }
}
