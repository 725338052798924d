//! `rlae`: serve backends, train weight policies, decode and evaluate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlae_core::agent::{checkpoint, FeatureConfig, RlPolicy, Variant};
use rlae_core::baselines::{PplPolicy, UniformPolicy};
use rlae_core::config::RunConfig;
use rlae_core::fusion::{generate, write_trace_jsonl, Ensemble, WeightPolicy};
use rlae_core::harness::{self, make_suite, Family};
use rlae_core::logit_server::LogitServer;
use rlae_core::trainer::{self, METRICS_HEADER};
use rlae_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "rlae",
    version,
    about = "Span-level ensemble decoding with learned mixing weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Seed override (beats RLAE_SEED and the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Weighting {
    Uniform,
    Ppl,
    Rl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Ppo,
    Mappo,
}

#[derive(Args, Debug, Clone)]
struct PolicyArgs {
    /// Weighting strategy.
    #[arg(long, value_enum, default_value = "rl")]
    weighting: Weighting,
    /// Policy checkpoint (required for `--weighting rl` unless set in the config).
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SuiteArgs {
    /// Task family: math, math-sub, text or mixed.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expose one configured backend over TCP.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Index into the config's backend list.
        #[arg(long, default_value_t = 0)]
        backend: usize,
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
    },
    /// Train a weight policy; writes metrics.csv and .rlae checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ppo")]
        algo: Algo,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Decode one prompt and print the text.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        prompt: String,
        /// Also print the per-span weight trace as JSON lines.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate a weighting on a task suite and write a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate at several span lengths; writes a CSV table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        suite: SuiteArgs,
        /// Comma-separated span lengths.
        #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_SPAN_LENGTHS)]
        lengths: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-span weight traces (JSON lines) and per-family mean weights (CSV).
    DumpWeights {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("RLAE_SEED") {
        cfg.rl.seed = s.trim().parse().map_err(|_| {
            Failure::Usage(format!("RLAE_SEED must be an unsigned integer, got {s:?}"))
        })?;
    }
    if let Some(seed) = common.seed {
        cfg.rl.seed = seed;
    }
    Ok(cfg)
}

fn apply_suite(cfg: &mut RunConfig, args: &SuiteArgs) -> Result<(), Failure> {
    if let Some(s) = &args.suite {
        cfg.suite.family = s
            .parse::<Family>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(n) = args.n {
        if n == 0 {
            return Err(Failure::Usage("--n must be >= 1".into()));
        }
        cfg.suite.n = n;
    }
    Ok(())
}

fn build_policy(
    cfg: &RunConfig,
    args: &PolicyArgs,
    ensemble: &Ensemble,
) -> Result<Box<dyn WeightPolicy>, Failure> {
    Ok(match args.weighting {
        Weighting::Uniform => Box::new(UniformPolicy),
        Weighting::Ppl => Box::new(PplPolicy),
        Weighting::Rl => {
            let path = args
                .ckpt
                .clone()
                .or_else(|| cfg.paths.checkpoint.clone())
                .ok_or_else(|| Failure::Usage("--weighting rl needs --ckpt <file.rlae>".into()))?;
            let net = checkpoint::load(&path).map_err(|e| {
                Failure::Runtime(format!("cannot load checkpoint {}: {e}", path.display()))
            })?;
            if net.k() != ensemble.k() {
                return Err(Failure::Runtime(format!(
                    "checkpoint {} was trained for {} backends, config has {}",
                    path.display(),
                    net.k(),
                    ensemble.k()
                )));
            }
            let features = FeatureConfig {
                window: cfg.rl.features.window,
                ..FeatureConfig::for_dim(net.input_dim(), net.k())?
            };
            Box::new(RlPolicy::new(net, features))
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve {
            common,
            backend,
            addr,
        } => {
            let cfg = load_config(&common)?;
            let spec = cfg.backends.get(backend).ok_or_else(|| {
                Failure::Usage(format!(
                    "backend index {backend} out of range ({} configured)",
                    cfg.backends.len()
                ))
            })?;
            let server = LogitServer::bind(Arc::from(spec.build()?), addr.as_str())?;
            println!("serving on {}", server.local_addr()?);
            std::io::stdout().flush()?;
            server.run()?;
            Ok(())
        }
        Command::Train {
            common,
            algo,
            out,
            iterations,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(it) = iterations {
                cfg.rl.iterations = it;
            }
            let out_dir = out.unwrap_or_else(|| cfg.paths.out_dir.clone());
            std::fs::create_dir_all(&out_dir)?;
            let variant = match algo {
                Algo::Ppo => Variant::Ppo,
                Algo::Mappo => Variant::Mappo,
            };
            let ensemble = Ensemble::from_specs(&cfg.backends)?;
            let tasks = make_suite(
                cfg.suite.family,
                cfg.suite.train_n,
                cfg.suite.seed.wrapping_add(1),
            )?;
            std::fs::write(out_dir.join("config.json"), cfg.to_json())?;

            let mut metrics = create(&out_dir.join("metrics.csv"))?;
            writeln!(metrics, "{METRICS_HEADER}")?;
            let every = cfg.rl.checkpoint_every;
            let outcome = trainer::train(
                &cfg.rl,
                variant,
                &ensemble,
                &cfg.fusion,
                &tasks,
                &mut |m, policy| {
                    writeln!(metrics, "{}", m.csv_row())?;
                    metrics.flush()?;
                    if every > 0 && (m.iter + 1) % every == 0 {
                        checkpoint::save(
                            &policy.net,
                            &out_dir.join(format!("ckpt_{:04}.rlae", m.iter + 1)),
                        )?;
                    }
                    Ok(())
                },
            )?;
            let final_path = out_dir.join("final.rlae");
            checkpoint::save(&outcome.policy.net, &final_path)?;
            if let Some(reason) = outcome.aborted {
                return Err(Failure::Runtime(format!(
                    "training aborted ({reason}); last finite parameters saved to {}",
                    final_path.display()
                )));
            }
            println!("{}", final_path.display());
            Ok(())
        }
        Command::Generate {
            common,
            policy,
            prompt,
            trace,
        } => {
            let cfg = load_config(&common)?;
            let ensemble = Ensemble::from_specs(&cfg.backends)?;
            let pol = build_policy(&cfg, &policy, &ensemble)?;
            let mode = cfg.fusion.decode_mode;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rl.seed);
            let t = generate(
                &prompt,
                pol.as_ref(),
                &ensemble,
                &cfg.fusion,
                mode,
                &mut rng,
            )?;
            println!("{}", t.text);
            if trace {
                let stdout = std::io::stdout();
                write_trace_jsonl([&t], stdout.lock())?;
            }
            Ok(())
        }
        Command::Eval {
            common,
            policy,
            suite,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            apply_suite(&mut cfg, &suite)?;
            let ensemble = Ensemble::from_specs(&cfg.backends)?;
            let pol = build_policy(&cfg, &policy, &ensemble)?;
            let tasks = make_suite(cfg.suite.family, cfg.suite.n, cfg.suite.seed)?;
            let ev = harness::evaluate(pol.as_ref(), &ensemble, &tasks, &cfg.fusion)?;
            log::info!(
                "accuracy {:.4} on {} tasks, {:.3} ms/token",
                ev.report.accuracy,
                ev.report.n,
                ev.wall_time.as_secs_f64() * 1e3 / ev.report.tokens.max(1) as f64
            );
            let json = serde_json::to_string_pretty(&ev.report).expect("report serializes");
            match out.or(cfg.paths.report.clone()) {
                Some(p) => {
                    let mut w = create(&p)?;
                    writeln!(w, "{json}")?;
                    w.flush()?;
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Ablate {
            common,
            policy,
            suite,
            lengths,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            apply_suite(&mut cfg, &suite)?;
            if lengths.iter().any(|&l| l == 0) {
                return Err(Failure::Usage("span lengths must be >= 1".into()));
            }
            let ensemble = Ensemble::from_specs(&cfg.backends)?;
            let pol = build_policy(&cfg, &policy, &ensemble)?;
            let tasks = make_suite(cfg.suite.family, cfg.suite.n, cfg.suite.seed)?;
            let rows =
                harness::span_ablation(pol.as_ref(), &ensemble, &tasks, &cfg.fusion, &lengths)?;
            match out {
                Some(p) => {
                    let mut w = create(&p)?;
                    harness::write_ablation_csv(&rows, &mut w)?;
                    w.flush()?;
                }
                None => harness::write_ablation_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::DumpWeights {
            common,
            policy,
            suite,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            apply_suite(&mut cfg, &suite)?;
            let ensemble = Ensemble::from_specs(&cfg.backends)?;
            let pol = build_policy(&cfg, &policy, &ensemble)?;
            let tasks = make_suite(cfg.suite.family, cfg.suite.n, cfg.suite.seed)?;
            let ev = harness::evaluate(pol.as_ref(), &ensemble, &tasks, &cfg.fusion)?;
            let csv = harness::dump_weight_traces(&ev.traces, &out)?;
            println!("{}\n{}", out.display(), csv.display());
            Ok(())
        }
    }
}
