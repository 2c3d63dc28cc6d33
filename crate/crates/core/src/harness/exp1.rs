//! Batch MC versus batch TD on the 25-step chain.

use std::path::{Path, PathBuf};

use crate::anet::{Activation, AnswerNet, FeatureRecipe};
use crate::env::{generate_trace, ActionSet, ObsMode, Trace, WalkConfig, NUM_STATES};
use crate::error::{Error, Result};
use crate::learner::{mc_train_unconditional, train_batch, BatchOptions, McMode};
use crate::oracle::{rmse, OracleTable};
use crate::par::{run_seed, try_map_runs, Execution};
use crate::qnet::QuestionNet;

use super::config::{ExperimentConfig, ExperimentKind, WeightingChoice};
use super::output::{fmt_value, write_table, CellStat, Metadata};
use super::tables::{answer_table, mc_table, other, state_features, weighting};
use super::write_trace;

#[derive(Clone, Debug, PartialEq)]
pub struct Exp1Params {
    pub walk: WalkConfig,
    pub chain_depth: usize,
    pub horizons: Vec<usize>,
    pub lengths: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub batch: BatchOptions,
    pub weighting: WeightingChoice,
    pub save_traces: bool,
    pub execution: Execution,
}

impl Exp1Params {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.experiment != ExperimentKind::Exp1 {
            return Err(Error::Config(format!("expected an exp1 config, got {}", cfg.experiment)));
        }
        let horizons = cfg.horizons.clone().unwrap_or_else(|| vec![1, 2, 5, 10, 25]);
        let chain_depth = horizons.iter().copied().max().unwrap_or(1);
        if horizons.contains(&0) {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        let defaults = BatchOptions::default();
        let alpha = match cfg.alpha.as_deref() {
            None => defaults.alpha,
            Some([a]) if *a > 0.0 => *a,
            Some(_) => return Err(Error::Config("exp1 takes a single positive batch alpha".into())),
        };
        if cfg.mode == Some(super::config::TrainingMode::Online) {
            return Err(Error::Config("exp1 is a batch experiment".into()));
        }
        Ok(Exp1Params {
            walk: WalkConfig::new(ObsMode::FullState, cfg.boundary),
            chain_depth,
            horizons,
            lengths: cfg.lengths.clone().unwrap_or_else(|| vec![50, 100, 150, 200]),
            runs: cfg.runs_or(100),
            seed: cfg.seed,
            batch: BatchOptions {
                alpha,
                max_sweeps: cfg.max_sweeps.unwrap_or(defaults.max_sweeps),
                tolerance: cfg.tolerance.unwrap_or(defaults.tolerance),
            },
            weighting: cfg.weighting,
            save_traces: cfg.save_traces,
            execution: Execution::default(),
        })
    }
}

/// Cells indexed `[length][horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Exp1Result {
    pub lengths: Vec<usize>,
    pub horizons: Vec<usize>,
    pub weighting: WeightingChoice,
    pub td: Vec<Vec<CellStat>>,
    pub mc: Vec<Vec<CellStat>>,
    /// Same cells under the other state weighting.
    pub td_alt: Vec<Vec<CellStat>>,
    pub mc_alt: Vec<Vec<CellStat>>,
    /// Largest |TD - MC| over all one-step state predictions of all runs.
    pub one_step_max_diff: Option<f64>,
    pub all_converged: bool,
    pub max_sweeps_used: usize,
}

impl Exp1Result {
    pub fn horizon_index(&self, h: usize) -> Option<usize> {
        self.horizons.iter().position(|&x| x == h)
    }

    pub fn length_index(&self, len: usize) -> Option<usize> {
        self.lengths.iter().position(|&x| x == len)
    }
}

struct RunOutcome {
    td: Vec<f64>,
    mc: Vec<f64>,
    td_alt: Vec<f64>,
    mc_alt: Vec<f64>,
    one_step_diff: Option<f64>,
    converged: bool,
    sweeps: usize,
}

/// The trace used by run `run` at sequence length `length`.
pub fn exp1_trace(params: &Exp1Params, length: usize, run: usize) -> Trace {
    generate_trace(params.walk, length, run_seed(params.seed, length as u64, run as u64))
}

pub fn run_exp1(params: &Exp1Params) -> Result<Exp1Result> {
    run_exp1_with_traces(params, None)
}

fn run_exp1_with_traces(params: &Exp1Params, trace_dir: Option<&Path>) -> Result<Exp1Result> {
    let q = QuestionNet::chain(params.chain_depth, params.walk.obs_mode.width(), ActionSet::left_right())?;
    let oracle = OracleTable::chain(params.walk, params.chain_depth);
    let recipe = FeatureRecipe::state_one_hot(NUM_STATES);
    let xs = state_features(&recipe, params.walk)?;
    let one_step = params.horizons.iter().position(|&h| h == 1);

    let jobs = params.lengths.len() * params.runs;
    let outcomes = try_map_runs(jobs, params.execution, |job| -> Result<RunOutcome> {
        let length = params.lengths[job / params.runs];
        let run = job % params.runs;
        let trace = exp1_trace(params, length, run);
        if let Some(dir) = trace_dir {
            write_trace(dir, &format!("exp1_len{length}_run{run:03}.csv"), &trace)?;
        }
        // both learners read this same recorded trace
        let anet = AnswerNet::zeros(q.len(), Activation::Identity, recipe.clone())?;
        let td_out = train_batch(&trace.experience, &q, anet, params.batch)?;
        let mc = mc_train_unconditional(&trace.experience, &recipe, &params.horizons, McMode::Batch)?;
        let td_table = answer_table(&td_out.anet, &xs)?;
        let mc_cols = mc_table(&mc, &xs);
        let mut mc_full = ndarray::Array2::zeros(td_table.raw_dim());
        for (k, &h) in params.horizons.iter().enumerate() {
            mc_full.column_mut(h - 1).assign(&mc_cols.column(k));
        }

        let main = weighting(params.weighting, &trace.hidden);
        let alt = weighting(other(params.weighting), &trace.hidden);
        let score = |table: &ndarray::Array2<f64>, w: &crate::oracle::Weighting| -> Vec<f64> {
            params.horizons.iter().map(|&h| rmse(table, &oracle, w, &[h - 1])).collect()
        };
        let one_step_diff = one_step.map(|k| {
            (0..NUM_STATES)
                .map(|s| (td_table[[s, 0]] - mc_cols[[s, k]]).abs())
                .fold(0.0, f64::max)
        });
        Ok(RunOutcome {
            td: score(&td_table, &main),
            mc: score(&mc_full, &main),
            td_alt: score(&td_table, &alt),
            mc_alt: score(&mc_full, &alt),
            one_step_diff,
            converged: td_out.converged,
            sweeps: td_out.sweeps,
        })
    })?;

    let cells = |pick: &dyn Fn(&RunOutcome) -> &Vec<f64>| -> Vec<Vec<CellStat>> {
        (0..params.lengths.len())
            .map(|li| {
                let chunk = &outcomes[li * params.runs..(li + 1) * params.runs];
                (0..params.horizons.len())
                    .map(|k| CellStat::from_samples(&chunk.iter().map(|o| pick(o)[k]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect()
    };
    Ok(Exp1Result {
        lengths: params.lengths.clone(),
        horizons: params.horizons.clone(),
        weighting: params.weighting,
        td: cells(&|o| &o.td),
        mc: cells(&|o| &o.mc),
        td_alt: cells(&|o| &o.td_alt),
        mc_alt: cells(&|o| &o.mc_alt),
        one_step_max_diff: one_step.map(|_| {
            outcomes
                .iter()
                .filter_map(|o| o.one_step_diff)
                .fold(0.0, f64::max)
        }),
        all_converged: outcomes.iter().all(|o| o.converged),
        max_sweeps_used: outcomes.iter().map(|o| o.sweeps).max().unwrap_or(0),
    })
}

/// Runs the experiment and writes its tables. Returns the result and the
/// files written.
pub fn exp1_artifacts(cfg: &ExperimentConfig, params: &Exp1Params, out: &Path) -> Result<(Exp1Result, Vec<PathBuf>)> {
    let trace_dir = if params.save_traces {
        let dir = out.join("traces");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Some(dir)
    } else {
        None
    };
    let result = run_exp1_with_traces(params, trace_dir.as_deref())?;
    let mut meta = Metadata::for_config(cfg, params.runs);
    meta.push("chain_depth", params.chain_depth)
        .push("batch_alpha", params.batch.alpha)
        .push("batch_tolerance", params.batch.tolerance)
        .push("max_sweeps", params.batch.max_sweeps)
        .push("max_sweeps_used", result.max_sweeps_used)
        .push("all_converged", result.all_converged);
    if let Some(d) = result.one_step_max_diff {
        meta.push("one_step_max_abs_diff", format!("{d:e}"));
    }

    let mut files = Vec::new();
    let header = table_header(&result.horizons);
    let body = |td: &[Vec<CellStat>], mc: &[Vec<CellStat>], se: bool| -> Vec<Vec<String>> {
        result
            .lengths
            .iter()
            .enumerate()
            .map(|(li, len)| {
                let mut row = vec![len.to_string()];
                for (k, &h) in result.horizons.iter().enumerate() {
                    let v = |c: CellStat| fmt_value(if se { c.se } else { c.mean });
                    if h == 1 {
                        row.push(v(td[li][k]));
                    } else {
                        row.push(v(mc[li][k]));
                        row.push(v(td[li][k]));
                    }
                }
                row
            })
            .collect()
    };
    files.push(write_table(out, "exp1_table1.csv", &meta, &header, &body(&result.td, &result.mc, false))?);
    files.push(write_table(out, "exp1_table1_se.csv", &meta, &header, &body(&result.td, &result.mc, true))?);
    let alt = other(params.weighting);
    let alt_meta = {
        let mut m = meta.clone();
        m.push("weighting_of_values", alt);
        m
    };
    files.push(write_table(
        out,
        &format!("exp1_table1_{alt}.csv"),
        &alt_meta,
        &header,
        &body(&result.td_alt, &result.mc_alt, false),
    )?);
    Ok((result, files))
}

fn table_header(horizons: &[usize]) -> Vec<String> {
    let mut header = vec!["steps".to_string()];
    for &h in horizons {
        if h == 1 {
            header.push("1-step MC/TD".into());
        } else {
            header.push(format!("{h}-step MC"));
            header.push(format!("{h}-step TD"));
        }
    }
    header
}
