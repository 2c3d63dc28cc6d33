use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anet::Activation;
use crate::env::{BoundaryRule, ObsMode};
use crate::error::{Error, Result};
use crate::oracle::IncorrectRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1,
    Exp2,
    Exp3,
    Custom,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp3 => "exp3",
            ExperimentKind::Custom => "custom",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingChoice {
    #[default]
    Uniform,
    Visitation,
}

impl fmt::Display for WeightingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingChoice::Uniform => "uniform",
            WeightingChoice::Visitation => "visitation",
        })
    }
}

impl FromStr for WeightingChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightingChoice::Uniform),
            "visitation" => Ok(WeightingChoice::Visitation),
            other => Err(Error::Config(format!("unknown weighting {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Online,
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    /// Seven one-hot state bits; needs full-state observations.
    StateOneHot,
    /// Bias, (previous action, bit) pair and previous predictions.
    History,
}

/// Where the question network comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QnetSource {
    Chain(usize),
    Tree(usize),
    File(PathBuf),
}

/// Everything an experiment run can be told. Unset fields take the
/// defaults of the chosen experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub runs: Option<usize>,
    #[serde(default)]
    pub boundary: BoundaryRule,
    #[serde(default)]
    pub weighting: WeightingChoice,
    pub alpha: Option<Vec<f64>>,
    pub mode: Option<TrainingMode>,
    /// Training-sequence lengths (batch) or stream length (online custom).
    pub lengths: Option<Vec<usize>>,
    pub horizons: Option<Vec<usize>>,
    pub depths: Option<Vec<usize>>,
    pub steps: Option<usize>,
    pub bin: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub max_sweeps: Option<usize>,
    pub tolerance: Option<f64>,
    pub activation: Option<Activation>,
    pub obs_mode: Option<ObsMode>,
    pub features: Option<FeatureChoice>,
    pub qnet: Option<QnetSource>,
    pub incorrect_rule: Option<IncorrectRule>,
    /// Replay a recorded trace instead of generating data (custom only).
    pub trace_file: Option<PathBuf>,
    #[serde(default)]
    pub save_traces: bool,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            seed: 0,
            runs: None,
            boundary: BoundaryRule::Stay,
            weighting: WeightingChoice::Uniform,
            alpha: None,
            mode: None,
            lengths: None,
            horizons: None,
            depths: None,
            steps: None,
            bin: None,
            checkpoints: None,
            max_sweeps: None,
            tolerance: None,
            activation: None,
            obs_mode: None,
            features: None,
            qnet: None,
            incorrect_rule: None,
            trace_file: None,
            save_traces: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(QnetSource::File(f)) = &mut cfg.qnet {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if let Some(f) = &mut cfg.trace_file {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short content hash of the effective configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Checks fields every experiment shares. Experiment-specific checks
    /// happen when the parameters are resolved.
    pub fn validate(&self) -> Result<()> {
        if self.runs == Some(0) {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        let nonempty = |name: &str, v: &Option<Vec<usize>>| match v {
            Some(v) if v.is_empty() => Err(Error::Config(format!("{name} must not be empty"))),
            _ => Ok(()),
        };
        nonempty("lengths", &self.lengths)?;
        nonempty("horizons", &self.horizons)?;
        nonempty("depths", &self.depths)?;
        nonempty("checkpoints", &self.checkpoints)?;
        if let Some(alpha) = &self.alpha {
            if alpha.is_empty() {
                return Err(Error::Config("alpha must not be empty".into()));
            }
            if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(Error::Config("alpha values must be finite and >= 0".into()));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(Error::Config("tolerance must be positive".into()));
            }
        }
        if self.bin == Some(0) {
            return Err(Error::Config("bin must be at least 1".into()));
        }
        if let Some(QnetSource::File(f)) = &self.qnet {
            if !f.is_file() {
                return Err(Error::Config(format!("question network file {} not found", f.display())));
            }
        }
        if let Some(f) = &self.trace_file {
            if !f.is_file() {
                return Err(Error::Config(format!("trace file {} not found", f.display())));
            }
        }
        Ok(())
    }

    pub(crate) fn runs_or(&self, default: usize) -> usize {
        self.runs.unwrap_or(default)
    }
}
