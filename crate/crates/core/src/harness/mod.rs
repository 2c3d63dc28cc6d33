//! Experiment drivers that turn a config into CSV artifacts.

pub mod config;
pub mod custom;
pub mod exp1;
pub mod exp2;
pub mod exp3;
pub mod output;
mod tables;

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::env::Trace;
use crate::error::{Error, Result};

pub use config::{ExperimentConfig, ExperimentKind, FeatureChoice, QnetSource, TrainingMode, WeightingChoice};
pub use custom::{run_custom, CustomParams, CustomResult};
pub use exp1::{run_exp1, Exp1Params, Exp1Result};
pub use exp2::{run_exp2, Exp2Params, Exp2Result};
pub use exp3::{run_exp3, Exp3Params, Exp3Result};
pub use output::{CellStat, Metadata};

/// What a finished run wrote and whether anything failed to converge.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub nonconverged: bool,
}

/// Validates `cfg`, runs the experiment it names and writes its artifacts
/// into `out`, which is created if needed.
///
/// Every parameter is resolved before any work starts, so a config error
/// never leaves partial output behind.
pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    enum Plan {
        Exp1(Exp1Params),
        Exp2(Exp2Params),
        Exp3(Exp3Params),
        Custom(Box<CustomParams>),
    }
    let plan = match cfg.experiment {
        ExperimentKind::Exp1 => Plan::Exp1(Exp1Params::from_config(cfg)?),
        ExperimentKind::Exp2 => Plan::Exp2(Exp2Params::from_config(cfg)?),
        ExperimentKind::Exp3 => Plan::Exp3(Exp3Params::from_config(cfg)?),
        ExperimentKind::Custom => Plan::Custom(Box::new(CustomParams::from_config(cfg)?)),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(match plan {
        Plan::Exp1(p) => {
            let (r, files) = exp1::exp1_artifacts(cfg, &p, out)?;
            RunReport {
                files,
                nonconverged: !r.all_converged,
            }
        }
        Plan::Exp2(p) => {
            let (r, files) = exp2::exp2_artifacts(cfg, &p, out)?;
            RunReport {
                files,
                nonconverged: !r.all_converged,
            }
        }
        Plan::Exp3(p) => {
            let (_, files) = exp3::exp3_artifacts(cfg, &p, out)?;
            RunReport {
                files,
                nonconverged: false,
            }
        }
        Plan::Custom(p) => {
            let (r, files) = custom::custom_artifacts(cfg, &p, out)?;
            RunReport {
                files,
                nonconverged: !(r.all_converged && r.oracle_converged),
            }
        }
    })
}

pub(crate) fn write_trace(dir: &Path, name: &str, trace: &Trace) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    trace.write_csv(std::io::BufWriter::new(file))?;
    Ok(path)
}
