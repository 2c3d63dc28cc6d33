//! Learning curves of TD networks on the bit-only walk.

use std::path::{Path, PathBuf};

use crate::anet::{Activation, AnswerNet, FeatureRecipe};
use crate::env::{generate_trace, ActionSet, ObsMode, WalkConfig, SPECIAL_BIT};
use crate::error::{Error, Result};
use crate::learner::TdState;
use crate::oracle::{one_step_nodes, BinnedRmse, OracleTable};
use crate::par::{run_seed, try_map_runs, Execution};
use crate::qnet::{tree_sequences, QuestionNet};

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{fmt_value, write_table, CellStat, Metadata};

const STREAM: u64 = 3 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Exp3Params {
    pub walk: WalkConfig,
    pub depths: Vec<usize>,
    pub alphas: Vec<f64>,
    pub runs: usize,
    pub steps: usize,
    pub bin: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Exp3Params {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.experiment != ExperimentKind::Exp3 {
            return Err(Error::Config(format!("expected an exp3 config, got {}", cfg.experiment)));
        }
        let depths = cfg.depths.clone().unwrap_or_else(|| vec![2, 3, 4]);
        if depths.contains(&0) {
            return Err(Error::Config("depths must be at least 1".into()));
        }
        let steps = cfg.steps.unwrap_or(250_000);
        let bin = cfg.bin.unwrap_or(1000);
        if steps < bin {
            return Err(Error::Config("steps must cover at least one bin".into()));
        }
        Ok(Exp3Params {
            walk: WalkConfig::new(ObsMode::BitOnly, cfg.boundary),
            depths,
            alphas: cfg.alpha.clone().unwrap_or_else(|| vec![1.0, 0.5, 0.25, 0.1, 0.05]),
            runs: cfg.runs_or(50),
            steps,
            bin,
            seed: cfg.seed,
            execution: Execution::default(),
        })
    }
}

/// Binned curves of one (depth, alpha) setting, averaged over runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub depth: usize,
    pub alpha: f64,
    pub rmse: Vec<CellStat>,
    pub empirical: Vec<CellStat>,
}

impl Curve {
    pub fn first(&self) -> CellStat {
        self.rmse[0]
    }

    pub fn last(&self) -> CellStat {
        *self.rmse.last().expect("at least one bin")
    }

    pub fn last_empirical(&self) -> CellStat {
        *self.empirical.last().expect("at least one bin")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exp3Result {
    pub bin: usize,
    pub curves: Vec<Curve>,
}

impl Exp3Result {
    pub fn curve(&self, depth: usize, alpha: f64) -> Option<&Curve> {
        self.curves.iter().find(|c| c.depth == depth && c.alpha == alpha)
    }

    /// The curve of `depth` with the lowest final-bin RMSE.
    pub fn best(&self, depth: usize) -> Option<&Curve> {
        self.curves
            .iter()
            .filter(|c| c.depth == depth)
            .min_by(|a, b| a.last().mean.total_cmp(&b.last().mean))
    }
}

/// Network, recipe and truth table for one tree depth.
pub struct DepthSetup {
    pub q: QuestionNet,
    pub recipe: FeatureRecipe,
    pub oracle: OracleTable,
    one_step: Vec<usize>,
}

impl DepthSetup {
    pub fn new(walk: WalkConfig, depth: usize) -> Result<Self> {
        let actions = ActionSet::left_right();
        let q = QuestionNet::action_tree(depth, walk.obs_mode.width(), actions.clone())?;
        let recipe = FeatureRecipe::history(actions.len(), q.len());
        let labels = q.nodes().iter().map(|n| n.label.clone()).collect();
        let oracle = OracleTable::conditional(walk, &tree_sequences(actions.len(), depth), labels);
        let one_step = one_step_nodes(&q)
            .into_iter()
            .map(|n| n.ok_or_else(|| Error::invalid("tree lacks a one-step node")))
            .collect::<Result<_>>()?;
        Ok(DepthSetup {
            q,
            recipe,
            oracle,
            one_step,
        })
    }
}

/// True and empirical binned RMSE of a single run on a shared trace.
pub fn curve_run(
    setup: &DepthSetup,
    trace: &crate::env::Trace,
    alpha: f64,
    bin: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let exp = &trace.experience;
    let anet = AnswerNet::zeros(setup.q.len(), Activation::Logistic, setup.recipe.clone())?;
    let mut td = TdState::new(&setup.q, anet, alpha, exp.observation(0))?;
    let mut truth = BinnedRmse::new(bin);
    let mut empirical = BinnedRmse::new(bin);
    for t in 0..exp.len() {
        let a = exp.action(t);
        let o_next = exp.observation(t + 1);
        {
            let y = td.predictions();
            let row = setup.oracle.row(trace.hidden.get(t));
            truth.push_step(y.iter().zip(row.iter()).map(|(p, v)| (p - v).powi(2)));
            let e = y[setup.one_step[a.0]] - o_next[SPECIAL_BIT];
            empirical.push_step([e * e]);
        }
        td.step(a, o_next)?;
    }
    Ok((truth.into_bins(), empirical.into_bins()))
}

pub fn run_exp3(p: &Exp3Params) -> Result<Exp3Result> {
    let setups = p
        .depths
        .iter()
        .map(|&d| DepthSetup::new(p.walk, d))
        .collect::<Result<Vec<_>>>()?;
    let settings: Vec<(usize, f64)> = (0..p.depths.len())
        .flat_map(|di| p.alphas.iter().map(move |&a| (di, a)))
        .collect();
    // every setting of a run sees the same walk
    let per_run = try_map_runs(p.runs, p.execution, |run| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let trace = generate_trace(p.walk, p.steps, run_seed(p.seed, STREAM, run as u64));
        settings
            .iter()
            .map(|&(di, alpha)| curve_run(&setups[di], &trace, alpha, p.bin))
            .collect()
    })?;
    let bins = p.steps / p.bin;
    let curves = settings
        .iter()
        .enumerate()
        .map(|(k, &(di, alpha))| {
            let stat = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<CellStat> {
                (0..bins)
                    .map(|b| CellStat::from_samples(&per_run.iter().map(|r| pick(&r[k])[b]).collect::<Vec<_>>()))
                    .collect()
            };
            Curve {
                depth: p.depths[di],
                alpha,
                rmse: stat(&|r| &r.0),
                empirical: stat(&|r| &r.1),
            }
        })
        .collect();
    Ok(Exp3Result { bin: p.bin, curves })
}

pub fn exp3_artifacts(cfg: &ExperimentConfig, p: &Exp3Params, out: &Path) -> Result<(Exp3Result, Vec<PathBuf>)> {
    let result = run_exp3(p)?;
    let meta = Metadata::for_config(cfg, p.runs)
        .with("steps", p.steps)
        .with("bin", p.bin)
        .with("activation", "logistic")
        .with("start_state", "centre");
    let header = ["depth", "alpha", "bin_end", "rmse", "rmse_se", "empirical_rmse", "empirical_se"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for c in &result.curves {
        for (b, (r, e)) in c.rmse.iter().zip(&c.empirical).enumerate() {
            rows.push(vec![
                c.depth.to_string(),
                c.alpha.to_string(),
                ((b + 1) * p.bin).to_string(),
                fmt_value(r.mean),
                fmt_value(r.se),
                fmt_value(e.mean),
                fmt_value(e.se),
            ]);
        }
    }
    let mut files = vec![write_table(out, "exp3_curves.csv", &meta, &header, &rows)?];
    let header = ["depth", "alpha", "first_bin_rmse", "final_bin_rmse", "final_bin_se", "final_empirical_rmse"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = result
        .curves
        .iter()
        .map(|c| {
            vec![
                c.depth.to_string(),
                c.alpha.to_string(),
                fmt_value(c.first().mean),
                fmt_value(c.last().mean),
                fmt_value(c.last().se),
                fmt_value(c.last_empirical().mean),
            ]
        })
        .collect();
    files.push(write_table(out, "exp3_summary.csv", &meta, &header, &rows)?);
    Ok((result, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alphas: Vec<f64>) -> Exp3Params {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Exp3);
        cfg.runs = Some(2);
        cfg.steps = Some(3000);
        cfg.depths = Some(vec![2]);
        cfg.alpha = Some(alphas);
        Exp3Params::from_config(&cfg).unwrap()
    }

    #[test]
    fn zero_step_size_gives_a_flat_curve() {
        let r = run_exp3(&small(vec![0.0])).unwrap();
        let c = &r.curves[0];
        assert_eq!(c.rmse.len(), 3);
        // with no learning every prediction stays at 0.5
        for b in &c.rmse {
            assert!((b.mean - 0.5).abs() < 1e-12);
        }
        for b in &c.empirical {
            assert!((b.mean - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn settings_share_the_walk() {
        let p = small(vec![0.5, 0.5]);
        let r = run_exp3(&p).unwrap();
        assert_eq!(r.curves[0].rmse, r.curves[1].rmse);
    }

    #[test]
    fn partial_bins_are_dropped() {
        let mut p = small(vec![0.5]);
        p.steps = 2500;
        let r = run_exp3(&p).unwrap();
        assert_eq!(r.curves[0].rmse.len(), 2);
    }
}
