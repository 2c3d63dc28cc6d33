//! Exact ground truth for the seven-state walk, computed from full
//! knowledge of the chain, and the error measures built on it.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::env::{Action, BoundaryRule, WalkConfig, NUM_STATES};
use crate::error::{Error, Result};
use crate::qnet::{QuestionNet, TargetSource};

/// Transition matrix of the walk under the uniform random policy, indexed
/// `0..7` for states `1..=7`.
pub fn transition_matrix(boundary: BoundaryRule) -> Array2<f64> {
    let mut p = Array2::zeros((NUM_STATES, NUM_STATES));
    for s in 1..=NUM_STATES {
        for a in [Action::LEFT, Action::RIGHT] {
            p[[s - 1, boundary.next_state(s, a) - 1]] += 0.5;
        }
    }
    p
}

pub fn stationary_distribution(boundary: BoundaryRule) -> [f64; NUM_STATES] {
    let p = transition_matrix(boundary);
    // lazy chain: the reflecting walk is periodic
    let mut pi = ndarray::Array1::from_elem(NUM_STATES, 1.0 / NUM_STATES as f64);
    for _ in 0..100_000 {
        let next = (&pi + &pi.dot(&p)) * 0.5;
        let diff = (&next - &pi).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    let mut out = [0.0; NUM_STATES];
    out.iter_mut().zip(pi.iter()).for_each(|(o, v)| *o = *v);
    out
}

fn special_bits() -> ndarray::Array1<f64> {
    (1..=NUM_STATES).map(WalkConfig::special_bit).collect()
}

/// Probability that the special bit is on exactly `h` steps after being in
/// `state`, by `h`-fold application of the transition matrix.
pub fn true_unconditional(boundary: BoundaryRule, h: usize, state: usize) -> f64 {
    check_state(state);
    let p = transition_matrix(boundary);
    let mut v = special_bits();
    for _ in 0..h {
        v = p.dot(&v);
    }
    v[state - 1]
}

/// Same quantity by enumerating all `2^h` equally likely action sequences.
pub fn true_unconditional_enumerated(boundary: BoundaryRule, h: usize, state: usize) -> f64 {
    check_state(state);
    assert!(h < 31, "enumeration is limited to short horizons");
    let mut hits = 0u64;
    for code in 0u64..(1 << h) {
        let mut s = state;
        for k in 0..h {
            let a = if code >> k & 1 == 1 {
                Action::RIGHT
            } else {
                Action::LEFT
            };
            s = boundary.next_state(s, a);
        }
        hits += (WalkConfig::special_bit(s) == 1.0) as u64;
    }
    hits as f64 / (1u64 << h) as f64
}

/// The special bit after executing `seq` from `state`.
pub fn true_conditional(boundary: BoundaryRule, seq: &[Action], state: usize) -> f64 {
    check_state(state);
    let end = seq.iter().fold(state, |s, &a| boundary.next_state(s, a));
    WalkConfig::special_bit(end)
}

fn check_state(state: usize) {
    assert!((1..=NUM_STATES).contains(&state), "state {state} out of range");
}

/// True predictions per (hidden state, node).
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    labels: Vec<String>,
    /// `values[[s - 1, i]]`
    values: Array2<f64>,
    pub config: WalkConfig,
}

impl OracleTable {
    pub fn new(labels: Vec<String>, values: Array2<f64>, config: WalkConfig) -> Result<Self> {
        if values.nrows() != NUM_STATES || values.ncols() != labels.len() {
            return Err(Error::invalid("oracle table must be 7 states by n nodes"));
        }
        Ok(OracleTable {
            labels,
            values,
            config,
        })
    }

    /// Tabulates `true_unconditional` for horizons `1..=depth`.
    pub fn chain(config: WalkConfig, depth: usize) -> Self {
        let mut values = Array2::zeros((NUM_STATES, depth));
        for s in 1..=NUM_STATES {
            for h in 1..=depth {
                values[[s - 1, h - 1]] = true_unconditional(config.boundary, h, s);
            }
        }
        OracleTable {
            labels: (1..=depth).map(|h| h.to_string()).collect(),
            values,
            config,
        }
    }

    /// Tabulates `true_conditional` for the given sequences.
    pub fn conditional(config: WalkConfig, sequences: &[Vec<Action>], labels: Vec<String>) -> Self {
        let mut values = Array2::zeros((NUM_STATES, sequences.len()));
        for s in 1..=NUM_STATES {
            for (i, seq) in sequences.iter().enumerate() {
                values[[s - 1, i]] = true_conditional(config.boundary, seq, s);
            }
        }
        OracleTable {
            labels,
            values,
            config,
        }
    }

    pub fn get(&self, state: usize, node: usize) -> f64 {
        self.values[[state - 1, node]]
    }

    pub fn row(&self, state: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(state - 1)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn max_abs_diff(&self, other: &OracleTable) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `state,node_label,true_value`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "node_label", "true_value"])?;
        for s in 1..=NUM_STATES {
            for (i, label) in self.labels.iter().enumerate() {
                w.write_record([s.to_string(), label.clone(), self.get(s, i).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<oracle csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub table: OracleTable,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `y* = E_π[(1 - c) y* + c z(o', y*')]` over hidden states by
/// fixed-point iteration from the zero table.
pub fn extensive_fixed_point(q: &QuestionNet, config: WalkConfig) -> Result<FixedPoint> {
    extensive_fixed_point_with(q, config, 1e-12, 1_000_000)
}

pub fn extensive_fixed_point_with(
    q: &QuestionNet,
    config: WalkConfig,
    tolerance: f64,
    max_iterations: usize,
) -> Result<FixedPoint> {
    if q.observation_width() != config.obs_mode.width() {
        return Err(Error::invalid(format!(
            "question network reads {} observation bits, the walk emits {}",
            q.observation_width(),
            config.obs_mode.width()
        )));
    }
    if q.actions().len() != 2 {
        return Err(Error::invalid("the walk has exactly two actions"));
    }
    let n = q.len();
    let observations: Vec<Vec<f64>> = (1..=NUM_STATES).map(|s| config.observe(s)).collect();
    let walk_actions = [Action::LEFT, Action::RIGHT];
    let mut y = Array2::<f64>::zeros((NUM_STATES, n));
    let mut next = y.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        for s in 1..=NUM_STATES {
            for (i, node) in q.nodes().iter().enumerate() {
                let mut v = 0.0;
                for a in walk_actions {
                    let s2 = config.boundary.next_state(s, a);
                    let c = node.condition.value(a);
                    let z: f64 = node
                        .terms
                        .iter()
                        .map(|t| {
                            t.weight
                                * match t.source {
                                    TargetSource::ObservationBit(b) => observations[s2 - 1][b],
                                    TargetSource::NextPrediction(k) => y[[s2 - 1, k]],
                                }
                        })
                        .sum();
                    v += 0.5 * ((1.0 - c) * y[[s - 1, i]] + c * z);
                }
                next[[s - 1, i]] = v;
            }
        }
        iterations += 1;
        let change = next
            .iter()
            .zip(y.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut y, &mut next);
        if !change.is_finite() {
            break;
        }
        if change < tolerance {
            converged = true;
            break;
        }
    }
    let labels = q.nodes().iter().map(|n| n.label.clone()).collect();
    Ok(FixedPoint {
        table: OracleTable::new(labels, y, config)?,
        iterations,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weighting {
    UniformStates,
    /// Per-state weights, e.g. from [`HiddenStates::visitation`].
    ///
    /// [`HiddenStates::visitation`]: crate::env::HiddenStates::visitation
    Visitation([f64; NUM_STATES]),
}

/// RMSE over `nodes` between learned per-state predictions (`[[s - 1, i]]`)
/// and the oracle, with states weighted as requested.
pub fn rmse(predictions: &Array2<f64>, oracle: &OracleTable, weighting: &Weighting, nodes: &[usize]) -> f64 {
    let weights = match weighting {
        Weighting::UniformStates => [1.0 / NUM_STATES as f64; NUM_STATES],
        Weighting::Visitation(w) => {
            let total: f64 = w.iter().sum();
            let mut out = *w;
            out.iter_mut().for_each(|v| *v /= total);
            out
        }
    };
    if nodes.is_empty() {
        return 0.0;
    }
    let mut mse = 0.0;
    for s in 1..=NUM_STATES {
        let per_state: f64 = nodes
            .iter()
            .map(|&i| (predictions[[s - 1, i]] - oracle.get(s, i)).powi(2))
            .sum::<f64>()
            / nodes.len() as f64;
        mse += weights[s - 1] * per_state;
    }
    mse.sqrt()
}

/// Which cells count as incorrect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncorrectRule {
    /// Wrong after rounding to the nearest of {0, 1}; cells the data never
    /// reached are judged by their initial value.
    Rounding,
    /// As `Rounding`, but any cell the data does not determine is
    /// incorrect regardless of its value.
    #[default]
    Undetermined,
}

/// Per-state predictions plus, per cell, whether the data determines it.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTable {
    pub values: Array2<f64>,
    pub determined: Array2<bool>,
}

impl PredictionTable {
    pub fn fully_determined(values: Array2<f64>) -> Self {
        let determined = Array2::from_elem(values.raw_dim(), true);
        PredictionTable { values, determined }
    }
}

/// Percentage of (state, node) cells over `nodes` that are incorrect.
pub fn incorrect_proportion(pred: &PredictionTable, oracle: &OracleTable, nodes: &[usize], rule: IncorrectRule) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let mut wrong = 0usize;
    for s in 1..=NUM_STATES {
        for &i in nodes {
            let truth = oracle.get(s, i);
            debug_assert!(truth == 0.0 || truth == 1.0, "oracle values must be binary");
            let rounded = if pred.values[[s - 1, i]] >= 0.5 { 1.0 } else { 0.0 };
            let bad = rounded != truth
                || (rule == IncorrectRule::Undetermined && !pred.determined[[s - 1, i]]);
            wrong += bad as usize;
        }
    }
    100.0 * wrong as f64 / (NUM_STATES * nodes.len()) as f64
}

/// Streaming RMSE in fixed-size bins of time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedRmse {
    bin: usize,
    sum: f64,
    count: usize,
    steps_in_bin: usize,
    bins: Vec<f64>,
}

impl BinnedRmse {
    pub fn new(bin: usize) -> Self {
        assert!(bin > 0, "bin size must be positive");
        BinnedRmse {
            bin,
            sum: 0.0,
            count: 0,
            steps_in_bin: 0,
            bins: Vec::new(),
        }
    }

    /// Adds one time step's squared errors.
    pub fn push_step(&mut self, squared_errors: impl IntoIterator<Item = f64>) {
        for e in squared_errors {
            self.sum += e;
            self.count += 1;
        }
        self.steps_in_bin += 1;
        if self.steps_in_bin == self.bin {
            self.bins.push(if self.count == 0 {
                0.0
            } else {
                (self.sum / self.count as f64).sqrt()
            });
            self.sum = 0.0;
            self.count = 0;
            self.steps_in_bin = 0;
        }
    }

    /// Completed bins; a trailing partial bin is dropped.
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<f64> {
        self.bins
    }
}

/// For each action, the node that predicts the next special bit given
/// that action, if the network has one.
pub fn one_step_nodes(q: &QuestionNet) -> Vec<Option<usize>> {
    use crate::qnet::Condition;
    q.actions()
        .iter()
        .map(|a| {
            q.nodes().iter().position(|n| {
                n.condition == Condition::ActionIs(a)
                    && n.terms.len() == 1
                    && n.terms[0].weight == 1.0
                    && n.terms[0].source == TargetSource::ObservationBit(crate::env::SPECIAL_BIT)
            })
        })
        .collect()
}

/// Binned RMSE of the one-step prediction for the action actually taken
/// against the bit actually observed next. `predictions[t]` is `y_t`.
pub fn empirical_rmse(
    q: &QuestionNet,
    exp: &crate::env::Experience,
    predictions: &[Vec<f64>],
    bin: usize,
) -> Result<Vec<f64>> {
    if predictions.len() != exp.len() {
        return Err(Error::invalid("one prediction vector per step is required"));
    }
    let nodes = one_step_nodes(q);
    let mut binned = BinnedRmse::new(bin);
    for (t, y) in predictions.iter().enumerate() {
        let a = exp.action(t);
        let node = nodes[a.0].ok_or_else(|| {
            Error::invalid(format!("no one-step node for action {}", q.actions().label(a)))
        })?;
        let observed = exp.observation(t + 1)[crate::env::SPECIAL_BIT];
        binned.push_step([(y[node] - observed).powi(2)]);
    }
    Ok(binned.into_bins())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionSet, ObsMode};
    use crate::qnet::{tree_sequences, Condition, NodeSpec, TargetTerm};

    fn stay() -> WalkConfig {
        WalkConfig::new(ObsMode::FullState, BoundaryRule::Stay)
    }

    #[test]
    fn unconditional_small_cases() {
        assert_eq!(true_unconditional(BoundaryRule::Stay, 1, 2), 0.5);
        assert_eq!(true_unconditional(BoundaryRule::Stay, 1, 4), 0.0);
        let direct = true_unconditional(BoundaryRule::Stay, 5, 4);
        let brute = true_unconditional_enumerated(BoundaryRule::Stay, 5, 4);
        assert!((direct - brute).abs() < 1e-12);
        // independent count with a throwaway script: 10 of the 32 paths
        assert_eq!(brute, 10.0 / 32.0);
    }

    #[test]
    fn conditional_cases() {
        let r = Action::RIGHT;
        let l = Action::LEFT;
        assert_eq!(true_conditional(BoundaryRule::Stay, &[r, r, r], 4), 1.0);
        assert_eq!(true_conditional(BoundaryRule::Stay, &[r, l], 4), 0.0);
    }

    #[test]
    fn stationary_distribution_is_uniform_for_stay() {
        let pi = stationary_distribution(BoundaryRule::Stay);
        assert!(pi.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-12));
        let pi = stationary_distribution(BoundaryRule::Reflect);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((pi[0] - 1.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_point_matches_closed_forms() {
        let q = QuestionNet::chain(25, 8, ActionSet::left_right()).unwrap();
        let fp = extensive_fixed_point(&q, stay()).unwrap();
        assert!(fp.converged);
        assert!(fp.table.max_abs_diff(&OracleTable::chain(stay(), 25)) < 1e-10);

        let q = QuestionNet::action_tree(2, 8, ActionSet::left_right()).unwrap();
        let fp = extensive_fixed_point(&q, stay()).unwrap();
        let labels = q.nodes().iter().map(|n| n.label.clone()).collect();
        let direct = OracleTable::conditional(stay(), &tree_sequences(2, 2), labels);
        assert!(fp.table.max_abs_diff(&direct) < 1e-10);
    }

    #[test]
    fn discounted_node_converges_geometrically() {
        // z = 0.1 * state-1 bit + 0.9 * y(next)
        let q = QuestionNet::new(
            8,
            ActionSet::left_right(),
            vec![NodeSpec {
                label: "4".into(),
                terms: vec![TargetTerm::obs(1, 0.1), TargetTerm::pred(0, 0.9)],
                condition: Condition::Always,
            }],
        )
        .unwrap();
        let fp = extensive_fixed_point(&q, stay()).unwrap();
        assert!(fp.converged);
        // contraction factor 0.9: about log(1e-12)/log(0.9) iterations
        assert!(fp.iterations < 400, "{}", fp.iterations);
        // Bellman check against the solved table
        let p = transition_matrix(BoundaryRule::Stay);
        for s in 0..7 {
            let expected: f64 = (0..7)
                .map(|s2| p[[s, s2]] * (0.1 * f64::from(u8::from(s2 == 0)) + 0.9 * fp.table.values()[[s2, 0]]))
                .sum();
            assert!((fp.table.values()[[s, 0]] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn rmse_closed_forms() {
        let oracle = OracleTable::chain(stay(), 1);
        let exact = oracle.values().clone();
        assert_eq!(rmse(&exact, &oracle, &Weighting::UniformStates, &[0]), 0.0);

        let q = QuestionNet::action_tree(1, 8, ActionSet::left_right()).unwrap();
        let fp = extensive_fixed_point(&q, stay()).unwrap();
        let half = Array2::from_elem((7, 2), 0.5);
        assert!((rmse(&half, &fp.table, &Weighting::UniformStates, &[0, 1]) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn incorrect_proportion_counts() {
        let seqs = tree_sequences(2, 1);
        let oracle = OracleTable::conditional(stay(), &seqs, vec!["L".into(), "R".into()]);
        let exact = PredictionTable::fully_determined(oracle.values().clone());
        assert_eq!(incorrect_proportion(&exact, &oracle, &[0, 1], IncorrectRule::Rounding), 0.0);

        // all at zero: wrong exactly where the truth is 1
        let zeros = PredictionTable::fully_determined(Array2::zeros((7, 2)));
        let ones = oracle.values().iter().filter(|&&v| v == 1.0).count() as f64;
        let expected = 100.0 * ones / 14.0;
        assert_eq!(incorrect_proportion(&zeros, &oracle, &[0, 1], IncorrectRule::Rounding), expected);

        let unknown = PredictionTable {
            values: Array2::zeros((7, 2)),
            determined: Array2::from_elem((7, 2), false),
        };
        assert_eq!(incorrect_proportion(&unknown, &oracle, &[0, 1], IncorrectRule::Undetermined), 100.0);
    }

    #[test]
    fn binned_rmse() {
        let mut b = BinnedRmse::new(2);
        b.push_step([0.25]);
        b.push_step([0.25]);
        b.push_step([0.0]);
        assert_eq!(b.bins(), &[0.5]);
    }

    #[test]
    fn empirical_rmse_of_constant_and_perfect_predictors() {
        let cfg = stay();
        let trace = crate::env::generate_trace(cfg, 3000, 4);
        let q = QuestionNet::action_tree(1, 8, ActionSet::left_right()).unwrap();
        let half = vec![vec![0.5, 0.5]; 3000];
        let bins = empirical_rmse(&q, &trace.experience, &half, 1000).unwrap();
        assert_eq!(bins, vec![0.5; 3]);

        let perfect: Vec<Vec<f64>> = (0..3000)
            .map(|t| {
                let s = trace.hidden.get(t);
                vec![
                    true_conditional(cfg.boundary, &[Action::LEFT], s),
                    true_conditional(cfg.boundary, &[Action::RIGHT], s),
                ]
            })
            .collect();
        let bins = empirical_rmse(&q, &trace.experience, &perfect, 1000).unwrap();
        assert_eq!(bins, vec![0.0; 3]);
    }

    #[test]
    fn observation_width_must_match() {
        let q = QuestionNet::chain(2, 3, ActionSet::left_right()).unwrap();
        assert!(extensive_fixed_point(&q, stay()).is_err());
    }
}
