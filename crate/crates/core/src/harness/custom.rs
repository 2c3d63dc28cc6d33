//! Arbitrary question networks, learners and walk settings.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::anet::{Activation, AnswerNet, FeaturePart, FeatureRecipe};
use crate::env::{generate_trace, ObsMode, Trace, WalkConfig, NUM_STATES};
use crate::error::{Error, Result};
use crate::learner::{train_batch, train_online, train_online_with, BatchOptions, PredictionLog};
use crate::oracle::{extensive_fixed_point, rmse, OracleTable};
use crate::par::{run_seed, try_map_runs, Execution};
use crate::qnet::QuestionNet;

use super::config::{ExperimentConfig, ExperimentKind, FeatureChoice, QnetSource, TrainingMode, WeightingChoice};
use super::output::{fmt_value, write_table, write_with, CellStat, Metadata};
use super::tables::{answer_table, state_features, weighting};

const STREAM: u64 = 4 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct CustomParams {
    pub walk: WalkConfig,
    pub q: QuestionNet,
    pub recipe: FeatureRecipe,
    pub activation: Activation,
    pub mode: TrainingMode,
    pub alphas: Vec<f64>,
    pub lengths: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub weighting: WeightingChoice,
    /// Trailing steps scored when predictions depend on history.
    pub window: usize,
    pub batch: BatchOptions,
    pub replay: Option<Trace>,
    pub execution: Execution,
}

impl CustomParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.experiment != ExperimentKind::Custom {
            return Err(Error::Config(format!("expected a custom config, got {}", cfg.experiment)));
        }
        let replay = match &cfg.trace_file {
            Some(path) => {
                let file = File::open(path).map_err(|e| Error::io(path, e))?;
                let trace = Trace::read_csv(file, cfg.boundary)
                    .map_err(|e| Error::Config(format!("trace file {}: {e}", path.display())))?;
                Some(trace)
            }
            None => None,
        };
        let obs_mode = match (&replay, cfg.obs_mode) {
            (Some(t), Some(m)) if t.config.obs_mode != m => {
                return Err(Error::Config("trace file and obs_mode disagree".into()));
            }
            (Some(t), _) => t.config.obs_mode,
            (None, m) => m.unwrap_or_default(),
        };
        let walk = WalkConfig::new(obs_mode, cfg.boundary);
        let q = match cfg.qnet.as_ref().ok_or_else(|| Error::Config("custom runs need a qnet".into()))? {
            QnetSource::Chain(d) => QuestionNet::chain(*d, obs_mode.width(), crate::env::ActionSet::left_right()),
            QnetSource::Tree(d) => QuestionNet::action_tree(*d, obs_mode.width(), crate::env::ActionSet::left_right()),
            QnetSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                QuestionNet::from_toml(&text)
            }
        }
        .map_err(|e| Error::Config(format!("question network: {e}")))?;
        if q.observation_width() != obs_mode.width() {
            return Err(Error::Config(format!(
                "question network expects {} observation bits, the walk gives {}",
                q.observation_width(),
                obs_mode.width()
            )));
        }
        let features = cfg.features.unwrap_or(match obs_mode {
            ObsMode::FullState => FeatureChoice::StateOneHot,
            ObsMode::BitOnly => FeatureChoice::History,
        });
        let recipe = match features {
            FeatureChoice::StateOneHot if obs_mode == ObsMode::BitOnly => {
                return Err(Error::Config("state one-hot features need full-state observations".into()));
            }
            FeatureChoice::StateOneHot => FeatureRecipe::state_one_hot(NUM_STATES),
            FeatureChoice::History => FeatureRecipe::history(q.actions().len(), q.len()),
        };
        let mode = cfg.mode.unwrap_or(TrainingMode::Online);
        let alphas = cfg.alpha.clone().unwrap_or_else(|| match mode {
            TrainingMode::Online => vec![0.1],
            TrainingMode::Batch => vec![BatchOptions::default().alpha],
        });
        if mode == TrainingMode::Batch && alphas.iter().any(|&a| a <= 0.0) {
            return Err(Error::Config("batch alpha must be positive".into()));
        }
        let (lengths, runs) = match &replay {
            Some(t) => (vec![t.len()], 1),
            None => (cfg.lengths.clone().unwrap_or_else(|| vec![1000]), cfg.runs_or(10)),
        };
        let defaults = BatchOptions::default();
        Ok(CustomParams {
            walk,
            q,
            recipe,
            activation: cfg.activation.unwrap_or(Activation::Identity),
            mode,
            alphas,
            lengths,
            runs,
            seed: cfg.seed,
            weighting: cfg.weighting,
            window: cfg.bin.unwrap_or(1000),
            batch: BatchOptions {
                max_sweeps: cfg.max_sweeps.unwrap_or(defaults.max_sweeps),
                tolerance: cfg.tolerance.unwrap_or(defaults.tolerance),
                ..defaults
            },
            replay,
            execution: Execution::default(),
        })
    }

    fn state_only(&self) -> bool {
        self.recipe
            .parts()
            .iter()
            .all(|p| matches!(p, FeaturePart::Bias | FeaturePart::StateOneHot { .. }))
    }

    fn trace(&self, length: usize, run: usize) -> Trace {
        match &self.replay {
            Some(t) => t.clone(),
            None => generate_trace(self.walk, length, run_seed(self.seed, STREAM + length as u64, run as u64)),
        }
    }
}

/// Per-node RMSE of one (length, alpha) setting.
#[derive(Clone, Debug, PartialEq)]
pub struct CustomRow {
    pub length: usize,
    pub alpha: f64,
    pub nodes: Vec<CellStat>,
    pub overall: CellStat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CustomResult {
    pub oracle: OracleTable,
    pub oracle_converged: bool,
    pub rows: Vec<CustomRow>,
    pub all_converged: bool,
}

struct Trained {
    anet: AnswerNet,
    converged: bool,
    log: Option<PredictionLog>,
}

fn train(p: &CustomParams, trace: &Trace, alpha: f64, keep_log: bool) -> Result<Trained> {
    let anet = AnswerNet::zeros(p.q.len(), p.activation, p.recipe.clone())?;
    match p.mode {
        TrainingMode::Online if keep_log => {
            let (anet, log) = train_online(&trace.experience, &p.q, anet, alpha)?;
            Ok(Trained { anet, converged: true, log: Some(log) })
        }
        TrainingMode::Online => {
            let anet = train_online_with(&trace.experience, &p.q, anet, alpha, |_, _| {})?;
            Ok(Trained { anet, converged: true, log: None })
        }
        TrainingMode::Batch => {
            let out = train_batch(&trace.experience, &p.q, anet, BatchOptions { alpha, ..p.batch })?;
            Ok(Trained { anet: out.anet, converged: out.converged, log: None })
        }
    }
}

/// Predictions `y_t` along the trace under fixed weights.
fn replay_predictions(anet: &AnswerNet, trace: &Trace) -> Result<Vec<Vec<f64>>> {
    let exp = &trace.experience;
    let n = anet.n();
    let mut y = anet.forward(&anet.features(None, exp.observation(0), &vec![0.0; n])?)?;
    let mut out = Vec::with_capacity(exp.len() + 1);
    for t in 0..exp.len() {
        let next = anet.forward(&anet.features(Some(exp.action(t)), exp.observation(t + 1), &y)?)?;
        out.push(std::mem::replace(&mut y, next));
    }
    out.push(y);
    Ok(out)
}

/// Per-node squared errors: state-weighted for state features, otherwise
/// averaged over the trailing window of the trace.
fn score(p: &CustomParams, oracle: &OracleTable, trace: &Trace, anet: &AnswerNet) -> Result<Vec<f64>> {
    let n = p.q.len();
    if p.state_only() {
        let table = answer_table(anet, &state_features(&p.recipe, p.walk)?)?;
        let w = weighting(p.weighting, &trace.hidden);
        return Ok((0..n).map(|i| rmse(&table, oracle, &w, &[i]).powi(2)).collect());
    }
    let ys = replay_predictions(anet, trace)?;
    let start = ys.len().saturating_sub(p.window);
    let mut sq = vec![0.0; n];
    for (t, y) in ys.iter().enumerate().skip(start) {
        let truth = oracle.row(trace.hidden.get(t));
        for i in 0..n {
            sq[i] += (y[i] - truth[i]).powi(2);
        }
    }
    let count = (ys.len() - start) as f64;
    Ok(sq.into_iter().map(|v| v / count).collect())
}

pub fn run_custom(p: &CustomParams) -> Result<CustomResult> {
    run_custom_inner(p, None)
}

fn run_custom_inner(p: &CustomParams, out: Option<(&Path, &Metadata, &mut Vec<PathBuf>)>) -> Result<CustomResult> {
    let fixed = extensive_fixed_point(&p.q, p.walk)?;
    let oracle = &fixed.table;
    let settings: Vec<(usize, f64)> = p
        .lengths
        .iter()
        .flat_map(|&l| p.alphas.iter().map(move |&a| (l, a)))
        .collect();
    let jobs = settings.len() * p.runs;
    let samples = try_map_runs(jobs, p.execution, |job| -> Result<(Vec<f64>, bool)> {
        let (length, alpha) = settings[job / p.runs];
        let trace = p.trace(length, job % p.runs);
        let trained = train(p, &trace, alpha, false)?;
        Ok((score(p, oracle, &trace, &trained.anet)?, trained.converged))
    })?;
    let n = p.q.len();
    let rows = settings
        .iter()
        .enumerate()
        .map(|(k, &(length, alpha))| {
            let chunk = &samples[k * p.runs..(k + 1) * p.runs];
            let nodes = (0..n)
                .map(|i| CellStat::from_samples(&chunk.iter().map(|(sq, _)| sq[i].sqrt()).collect::<Vec<_>>()))
                .collect();
            let overall = CellStat::from_samples(
                &chunk
                    .iter()
                    .map(|(sq, _)| (sq.iter().sum::<f64>() / n as f64).sqrt())
                    .collect::<Vec<_>>(),
            );
            CustomRow {
                length,
                alpha,
                nodes,
                overall,
            }
        })
        .collect();

    if let Some((dir, meta, files)) = out {
        // detailed logs for the first run of the first setting
        let (length, alpha) = settings[0];
        let trace = p.trace(length, 0);
        let trained = train(p, &trace, alpha, true)?;
        let meta = meta.with("detail_length", length).with("detail_alpha", alpha).with("detail_run", 0);
        files.push(write_with(dir, "custom_trace.csv", &meta, |w| trace.write_csv(w))?);
        files.push(write_with(dir, "custom_weights.csv", &meta, |w| trained.anet.write_weights_csv(&p.q, w))?);
        if let Some(log) = &trained.log {
            files.push(write_with(dir, "custom_predictions.csv", &meta, |w| log.write_csv(&p.q, w))?);
        }
    }

    Ok(CustomResult {
        oracle: fixed.table.clone(),
        oracle_converged: fixed.converged,
        rows,
        all_converged: samples.iter().all(|(_, c)| *c),
    })
}

pub fn custom_artifacts(cfg: &ExperimentConfig, p: &CustomParams, out: &Path) -> Result<(CustomResult, Vec<PathBuf>)> {
    let mut meta = Metadata::for_config(cfg, p.runs);
    meta.push("mode", format!("{:?}", p.mode).to_lowercase())
        .push("activation", format!("{:?}", p.activation).to_lowercase())
        .push("nodes", p.q.len())
        .push("features", p.recipe.len());
    if !p.state_only() {
        meta.push("scored_window", p.window);
    }
    if p.replay.is_some() {
        meta.push("replayed_trace", true);
    }
    let mut files = Vec::new();
    let result = run_custom_inner(p, Some((out, &meta, &mut files)))?;
    let meta = meta
        .with("oracle_converged", result.oracle_converged)
        .with("all_converged", result.all_converged);
    files.insert(0, write_with(out, "custom_oracle.csv", &meta, |w| result.oracle.write_csv(w))?);

    let header = ["length", "alpha", "node", "rmse", "rmse_se"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for r in &result.rows {
        for (i, c) in r.nodes.iter().enumerate() {
            rows.push(vec![
                r.length.to_string(),
                r.alpha.to_string(),
                p.q.node(i).label.clone(),
                fmt_value(c.mean),
                fmt_value(c.se),
            ]);
        }
        rows.push(vec![
            r.length.to_string(),
            r.alpha.to_string(),
            "all".into(),
            fmt_value(r.overall.mean),
            fmt_value(r.overall.se),
        ]);
    }
    files.insert(1, write_table(out, "custom_rmse.csv", &meta, &header, &rows)?);
    Ok((result, files))
}
