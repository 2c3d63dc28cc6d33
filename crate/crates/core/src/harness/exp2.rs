//! Action-conditional predictions on the depth-4 tree, online and batch.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::anet::{Activation, AnswerNet, FeatureRecipe};
use crate::env::{generate_trace, ActionSet, ObsMode, WalkConfig, NUM_STATES};
use crate::error::{Error, Result};
use crate::learner::{mc_train_conditional, train_batch, BatchOptions, McConditional, McMode, TdState};
use crate::oracle::{incorrect_proportion, rmse, IncorrectRule, OracleTable, PredictionTable};
use crate::par::{run_seed, try_map_runs, Execution};
use crate::qnet::{tree_sequences, QuestionNet};

use super::config::{ExperimentConfig, ExperimentKind, TrainingMode, WeightingChoice};
use super::output::{fmt_value, write_table, CellStat, Metadata};
use super::tables::{answer_table, mc_table, state_features, weighting};
use super::write_trace;

const ONLINE_STREAM: u64 = 1 << 40;
const BATCH_STREAM: u64 = 2 << 40;

/// Cells whose converged batch-TD value moves by more than this between
/// the two starting weight matrices are treated as undetermined.
pub const DETERMINACY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Exp2Params {
    pub walk: WalkConfig,
    pub depth: usize,
    pub runs: usize,
    pub seed: u64,
    pub online_alpha: f64,
    pub checkpoints: Vec<usize>,
    pub lengths: Vec<usize>,
    pub batch: BatchOptions,
    pub rule: IncorrectRule,
    pub weighting: WeightingChoice,
    /// Run only the online part, only the batch part, or both (`None`).
    pub only: Option<TrainingMode>,
    pub save_traces: bool,
    pub execution: Execution,
}

impl Exp2Params {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.experiment != ExperimentKind::Exp2 {
            return Err(Error::Config(format!("expected an exp2 config, got {}", cfg.experiment)));
        }
        let depth = match cfg.depths.as_deref() {
            None => 4,
            Some([d]) if *d >= 1 => *d,
            Some(_) => return Err(Error::Config("exp2 takes a single tree depth >= 1".into())),
        };
        let online_alpha = match cfg.alpha.as_deref() {
            None => 1.0,
            Some([a]) => *a,
            Some(_) => return Err(Error::Config("exp2 takes a single online alpha".into())),
        };
        let checkpoints = cfg.checkpoints.clone().unwrap_or_else(|| vec![100, 200, 300, 400, 500]);
        if let Some(steps) = cfg.steps {
            if checkpoints.iter().any(|&c| c > steps) {
                return Err(Error::Config("checkpoints must not exceed steps".into()));
            }
        }
        let defaults = BatchOptions::default();
        Ok(Exp2Params {
            walk: WalkConfig::new(ObsMode::FullState, cfg.boundary),
            depth,
            runs: cfg.runs_or(100),
            seed: cfg.seed,
            online_alpha,
            checkpoints,
            lengths: cfg.lengths.clone().unwrap_or_else(|| vec![50, 100, 150, 200]),
            batch: BatchOptions {
                max_sweeps: cfg.max_sweeps.unwrap_or(defaults.max_sweeps),
                tolerance: cfg.tolerance.unwrap_or(defaults.tolerance),
                ..defaults
            },
            rule: cfg.incorrect_rule.unwrap_or_default(),
            weighting: cfg.weighting,
            only: cfg.mode,
            save_traces: cfg.save_traces,
            execution: Execution::default(),
        })
    }

    fn online_steps(&self) -> usize {
        self.checkpoints.iter().copied().max().unwrap_or(0)
    }
}

/// Online RMSE at one time step, one cell per prediction depth.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRow {
    pub steps: usize,
    pub td: Vec<CellStat>,
    pub mc: Vec<CellStat>,
    /// Fraction of runs whose TD predictions of depth >= 2 are all exact.
    pub td_exact_fraction: f64,
    /// Fraction of runs whose MC predictions of depth >= 2 still have error.
    pub mc_inexact_fraction: f64,
}

/// Incorrect-prediction percentages after batch training on one length.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub length: usize,
    pub td: CellStat,
    pub mc: CellStat,
    /// The same cells under the other counting rule.
    pub td_alt: CellStat,
    pub mc_alt: CellStat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exp2Result {
    pub depth: usize,
    pub rule: IncorrectRule,
    pub online: Vec<OnlineRow>,
    pub batch: Vec<BatchRow>,
    pub all_converged: bool,
}

impl Exp2Result {
    pub fn online_at(&self, steps: usize) -> Option<&OnlineRow> {
        self.online.iter().find(|r| r.steps == steps)
    }

    pub fn batch_at(&self, length: usize) -> Option<&BatchRow> {
        self.batch.iter().find(|r| r.length == length)
    }
}

fn other_rule(rule: IncorrectRule) -> IncorrectRule {
    match rule {
        IncorrectRule::Rounding => IncorrectRule::Undetermined,
        IncorrectRule::Undetermined => IncorrectRule::Rounding,
    }
}

struct Setup {
    q: QuestionNet,
    oracle: OracleTable,
    recipe: FeatureRecipe,
    xs: Vec<Vec<f64>>,
    /// Node indices per prediction depth, `groups[d - 1]`.
    groups: Vec<Vec<usize>>,
}

impl Setup {
    fn new(p: &Exp2Params) -> Result<Self> {
        let actions = ActionSet::left_right();
        let q = QuestionNet::action_tree(p.depth, p.walk.obs_mode.width(), actions.clone())?;
        let seqs = tree_sequences(actions.len(), p.depth);
        let labels = q.nodes().iter().map(|n| n.label.clone()).collect();
        let oracle = OracleTable::conditional(p.walk, &seqs, labels);
        let mut groups = vec![Vec::new(); p.depth];
        for (i, s) in seqs.iter().enumerate() {
            groups[s.len() - 1].push(i);
        }
        let recipe = FeatureRecipe::state_one_hot(NUM_STATES);
        let xs = state_features(&recipe, p.walk)?;
        Ok(Setup {
            q,
            oracle,
            recipe,
            xs,
            groups,
        })
    }

    fn deep_nodes(&self) -> Vec<usize> {
        self.groups.iter().skip(1).flatten().copied().collect()
    }
}

struct OnlineSample {
    td: Vec<f64>,
    mc: Vec<f64>,
    td_deep: f64,
    mc_deep: f64,
}

fn online_run(p: &Exp2Params, setup: &Setup, run: usize, trace_dir: Option<&Path>) -> Result<Vec<OnlineSample>> {
    let trace = generate_trace(p.walk, p.online_steps(), run_seed(p.seed, ONLINE_STREAM, run as u64));
    if let Some(dir) = trace_dir {
        write_trace(dir, &format!("exp2_online_run{run:03}.csv"), &trace)?;
    }
    let exp = &trace.experience;
    let anet = AnswerNet::zeros(setup.q.len(), Activation::Identity, setup.recipe.clone())?;
    let mut td = TdState::new(&setup.q, anet, p.online_alpha, exp.observation(0))?;
    let mut mc = McConditional::new(setup.q.actions(), p.depth, setup.recipe.clone(), p.online_alpha)?;
    mc.observe(None, exp.observation(0))?;
    let w = weighting(p.weighting, &trace.hidden);
    let deep = setup.deep_nodes();
    let mut samples = Vec::new();
    let sample = |td: &TdState<'_>, mc: &McConditional| -> Result<OnlineSample> {
        let td_table = answer_table(td.answer_net(), &setup.xs)?;
        let mc_table = mc_table(mc.predictions(), &setup.xs);
        let score = |t: &Array2<f64>, nodes: &[usize]| rmse(t, &setup.oracle, &w, nodes);
        Ok(OnlineSample {
            td: setup.groups.iter().map(|g| score(&td_table, g)).collect(),
            mc: setup.groups.iter().map(|g| score(&mc_table, g)).collect(),
            td_deep: score(&td_table, &deep),
            mc_deep: score(&mc_table, &deep),
        })
    };
    if p.checkpoints.contains(&0) {
        samples.push((0, sample(&td, &mc)?));
    }
    for t in 0..exp.len() {
        td.step(exp.action(t), exp.observation(t + 1))?;
        mc.observe(Some(exp.action(t)), exp.observation(t + 1))?;
        if p.checkpoints.contains(&(t + 1)) {
            samples.push((t + 1, sample(&td, &mc)?));
        }
    }
    // report in checkpoint order
    Ok(p.checkpoints
        .iter()
        .map(|c| {
            let (_, s) = samples.iter().find(|(t, _)| t == c).expect("checkpoint sampled");
            OnlineSample {
                td: s.td.clone(),
                mc: s.mc.clone(),
                td_deep: s.td_deep,
                mc_deep: s.mc_deep,
            }
        })
        .collect())
}

struct BatchSample {
    td: [f64; 2],
    mc: [f64; 2],
    converged: bool,
}

fn batch_run(p: &Exp2Params, setup: &Setup, length: usize, run: usize, trace_dir: Option<&Path>) -> Result<BatchSample> {
    let trace = generate_trace(p.walk, length, run_seed(p.seed, BATCH_STREAM + length as u64, run as u64));
    if let Some(dir) = trace_dir {
        write_trace(dir, &format!("exp2_batch_len{length}_run{run:03}.csv"), &trace)?;
    }
    let exp = &trace.experience;
    let n = setup.q.len();
    let m = setup.recipe.len();
    let from_zero = train_batch(exp, &setup.q, AnswerNet::zeros(n, Activation::Identity, setup.recipe.clone())?, p.batch)?;
    let ones = AnswerNet::with_weights(Array2::ones((n, m)), Activation::Identity, setup.recipe.clone())?;
    let from_one = train_batch(exp, &setup.q, ones, p.batch)?;
    let y0 = answer_table(&from_zero.anet, &setup.xs)?;
    let y1 = answer_table(&from_one.anet, &setup.xs)?;
    let td = PredictionTable {
        determined: ndarray::Zip::from(&y0)
            .and(&y1)
            .map_collect(|a, b| (a - b).abs() <= DETERMINACY_TOLERANCE),
        values: y0,
    };

    let preds = mc_train_conditional(exp, setup.q.actions(), p.depth, &setup.recipe, McMode::Batch)?;
    let mut informed = Array2::from_elem((NUM_STATES, n), false);
    for (s, x) in setup.xs.iter().enumerate() {
        for i in 0..n {
            informed[[s, i]] = preds.is_informed(i, x);
        }
    }
    let mc = PredictionTable {
        values: mc_table(&preds, &setup.xs),
        determined: informed,
    };
    let all: Vec<usize> = (0..n).collect();
    let pct = |t: &PredictionTable, rule| incorrect_proportion(t, &setup.oracle, &all, rule);
    Ok(BatchSample {
        td: [pct(&td, p.rule), pct(&td, other_rule(p.rule))],
        mc: [pct(&mc, p.rule), pct(&mc, other_rule(p.rule))],
        converged: from_zero.converged && from_one.converged,
    })
}

pub fn run_exp2(params: &Exp2Params) -> Result<Exp2Result> {
    run_exp2_with_traces(params, None)
}

fn run_exp2_with_traces(p: &Exp2Params, trace_dir: Option<&Path>) -> Result<Exp2Result> {
    let setup = Setup::new(p)?;
    let mut online = Vec::new();
    if p.only != Some(TrainingMode::Batch) {
        let runs = try_map_runs(p.runs, p.execution, |r| online_run(p, &setup, r, trace_dir))?;
        for (k, &steps) in p.checkpoints.iter().enumerate() {
            let at: Vec<&OnlineSample> = runs.iter().map(|r| &r[k]).collect();
            let cells = |pick: &dyn Fn(&OnlineSample) -> &Vec<f64>| -> Vec<CellStat> {
                (0..p.depth)
                    .map(|d| CellStat::from_samples(&at.iter().map(|s| pick(s)[d]).collect::<Vec<_>>()))
                    .collect()
            };
            let frac = |f: &dyn Fn(&OnlineSample) -> bool| at.iter().filter(|s| f(s)).count() as f64 / at.len() as f64;
            online.push(OnlineRow {
                steps,
                td: cells(&|s| &s.td),
                mc: cells(&|s| &s.mc),
                td_exact_fraction: frac(&|s| s.td_deep == 0.0),
                mc_inexact_fraction: frac(&|s| s.mc_deep > 0.0),
            });
        }
    }

    let mut batch = Vec::new();
    let mut all_converged = true;
    if p.only != Some(TrainingMode::Online) {
        let jobs = p.lengths.len() * p.runs;
        let samples = try_map_runs(jobs, p.execution, |job| {
            batch_run(p, &setup, p.lengths[job / p.runs], job % p.runs, trace_dir)
        })?;
        all_converged = samples.iter().all(|s| s.converged);
        for (li, &length) in p.lengths.iter().enumerate() {
            let chunk = &samples[li * p.runs..(li + 1) * p.runs];
            let stat = |f: &dyn Fn(&BatchSample) -> f64| CellStat::from_samples(&chunk.iter().map(f).collect::<Vec<_>>());
            batch.push(BatchRow {
                length,
                td: stat(&|s| s.td[0]),
                mc: stat(&|s| s.mc[0]),
                td_alt: stat(&|s| s.td[1]),
                mc_alt: stat(&|s| s.mc[1]),
            });
        }
    }
    Ok(Exp2Result {
        depth: p.depth,
        rule: p.rule,
        online,
        batch,
        all_converged,
    })
}

fn rule_name(rule: IncorrectRule) -> &'static str {
    match rule {
        IncorrectRule::Rounding => "rounding",
        IncorrectRule::Undetermined => "undetermined",
    }
}

pub fn exp2_artifacts(cfg: &ExperimentConfig, p: &Exp2Params, out: &Path) -> Result<(Exp2Result, Vec<PathBuf>)> {
    let trace_dir = if p.save_traces {
        let dir = out.join("traces");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Some(dir)
    } else {
        None
    };
    let result = run_exp2_with_traces(p, trace_dir.as_deref())?;
    let mut meta = Metadata::for_config(cfg, p.runs);
    meta.push("tree_depth", p.depth);
    let mut files = Vec::new();

    if !result.online.is_empty() {
        let meta = meta
            .with("protocol", format!("{} independent streams from the centre state", p.runs))
            .with("online_alpha", p.online_alpha);
        let mut header = vec!["steps".to_string()];
        for d in 1..=p.depth {
            header.push(format!("{d}-step MC"));
            header.push(format!("{d}-step TD"));
        }
        let body = |se: bool| -> Vec<Vec<String>> {
            result
                .online
                .iter()
                .map(|row| {
                    let mut line = vec![row.steps.to_string()];
                    for d in 0..p.depth {
                        let v = |c: CellStat| fmt_value(if se { c.se } else { c.mean });
                        line.push(v(row.mc[d]));
                        line.push(v(row.td[d]));
                    }
                    line
                })
                .collect()
        };
        files.push(write_table(out, "exp2_table2.csv", &meta, &header, &body(false))?);
        files.push(write_table(out, "exp2_table2_se.csv", &meta, &header, &body(true))?);
        let header = ["steps", "td_exact_fraction", "mc_inexact_fraction"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = result
            .online
            .iter()
            .map(|r| vec![r.steps.to_string(), fmt_value(r.td_exact_fraction), fmt_value(r.mc_inexact_fraction)])
            .collect();
        files.push(write_table(out, "exp2_online_runs.csv", &meta, &header, &rows)?);
    }

    if !result.batch.is_empty() {
        let meta = meta
            .with("batch_alpha", p.batch.alpha)
            .with("batch_tolerance", p.batch.tolerance)
            .with("all_converged", result.all_converged)
            .with("determinacy_tolerance", DETERMINACY_TOLERANCE);
        let header = ["steps", "MC", "TD", "MC_se", "TD_se"].map(String::from).to_vec();
        let body = |alt: bool| -> Vec<Vec<String>> {
            result
                .batch
                .iter()
                .map(|r| {
                    let (mc, td) = if alt { (r.mc_alt, r.td_alt) } else { (r.mc, r.td) };
                    vec![r.length.to_string(), fmt_value(mc.mean), fmt_value(td.mean), fmt_value(mc.se), fmt_value(td.se)]
                })
                .collect()
        };
        files.push(write_table(
            out,
            "exp2_table3.csv",
            &meta.with("incorrect_rule", rule_name(p.rule)),
            &header,
            &body(false),
        )?);
        let alt = other_rule(p.rule);
        files.push(write_table(
            out,
            &format!("exp2_table3_{}.csv", rule_name(alt)),
            &meta.with("incorrect_rule", rule_name(alt)),
            &header,
            &body(true),
        )?);
    }
    Ok((result, files))
}
