//! Run configuration: one JSON document describing backends, training,
//! decoding, the task suite and output paths. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendSpec, Expertise};
use crate::fusion::FusionConfig;
use crate::harness::Family;
use crate::trainer::RLConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub family: Family,
    /// Evaluation tasks.
    pub n: usize,
    /// Training tasks.
    pub train_n: usize,
    /// Evaluation suites use this seed, training suites `seed + 1`.
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            family: Family::Mixed,
            n: 200,
            train_n: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory for checkpoints and metrics.
    pub out_dir: PathBuf,
    /// Policy checkpoint read by `generate`, `eval` and `dump-weights`.
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            report: None,
        }
    }
}

fn default_backends() -> Vec<BackendSpec> {
    Expertise::ALL
        .iter()
        .map(|&e| BackendSpec::scripted(e))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_backends")]
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub rl: RLConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backends: default_backends(),
            rl: RLConfig::default(),
            fusion: FusionConfig::default(),
            suite: SuiteConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.backends.is_empty() {
            return Err(Error::Config(
                "backends must list at least one backend".into(),
            ));
        }
        for (i, b) in self.backends.iter().enumerate() {
            let t = b.temperature();
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "backends[{i}].temperature must be positive"
                )));
            }
        }
        self.rl.validate()?;
        self.fusion.validate()?;
        if self.suite.n == 0 || self.suite.train_n == 0 {
            return Err(Error::Config(
                "suite.n and suite.train_n must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
