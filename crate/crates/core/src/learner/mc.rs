//! Monte Carlo baselines: predictions regressed directly toward the outcome
//! observed later in the sequence.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView1};

use crate::anet::FeatureRecipe;
use crate::env::{Action, ActionSet, Experience, SPECIAL_BIT};
use crate::error::{Error, Result};
use crate::qnet::tree_sequences;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum McMode {
    /// Delta rule applied as soon as each outcome is seen.
    Online { alpha: f64 },
    /// Converged least squares; for one-hot features this is the sample
    /// mean of the outcomes seen from each feature.
    Batch,
}

/// Linear Monte Carlo predictions, one row per predicted quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct McPredictions {
    weights: Array2<f64>,
    /// Number of updates each (row, feature) weight has received.
    updates: Array2<u32>,
}

impl McPredictions {
    fn zeros(rows: usize, m: usize) -> Self {
        McPredictions {
            weights: Array2::zeros((rows, m)),
            updates: Array2::zeros((rows, m)),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let x = ArrayView1::from(x);
        self.weights.rows().into_iter().map(|r| r.dot(&x)).collect()
    }

    /// Whether every active feature of `x` has been updated for `row`.
    pub fn is_informed(&self, row: usize, x: &[f64]) -> bool {
        x.iter()
            .zip(self.updates.row(row))
            .all(|(&xj, &u)| xj == 0.0 || u > 0)
    }

    pub fn total_updates(&self, row: usize) -> u64 {
        self.updates.row(row).iter().map(|&u| u as u64).sum()
    }

    fn delta(&mut self, row: usize, x: &[f64], target: f64, alpha: f64) {
        let mut w = self.weights.row_mut(row);
        let y: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let scale = alpha * (target - y);
        for (wj, &xj) in w.iter_mut().zip(x) {
            *wj += scale * xj;
        }
        self.mark(row, x);
    }

    fn mark(&mut self, row: usize, x: &[f64]) {
        for (u, &xj) in self.updates.row_mut(row).iter_mut().zip(x) {
            if xj != 0.0 {
                *u += 1;
            }
        }
    }
}

fn one_hot_index(x: &[f64]) -> Result<usize> {
    let mut hot = x.iter().enumerate().filter(|(_, &v)| v != 0.0);
    match (hot.next(), hot.next()) {
        (Some((j, 1.0)), None) => Ok(j),
        _ => Err(Error::invalid("batch Monte Carlo needs one-hot features")),
    }
}

fn features(exp: &Experience, recipe: &FeatureRecipe) -> Result<Vec<Vec<f64>>> {
    if recipe.uses_predictions() {
        return Err(Error::invalid("Monte Carlo features cannot feed back predictions"));
    }
    (0..=exp.len())
        .map(|t| {
            let a_prev = t.checked_sub(1).map(|p| exp.action(p));
            recipe.build(a_prev, exp.observation(t), &[])
        })
        .collect()
}

/// Predicts the special bit exactly `h` steps ahead for each horizon.
///
/// The prediction made at time `t` is only trained once `t + h` is inside
/// the data, so the last `h` observations of a sequence produce no
/// `h`-step update.
pub fn mc_train_unconditional(
    exp: &Experience,
    recipe: &FeatureRecipe,
    horizons: &[usize],
    mode: McMode,
) -> Result<McPredictions> {
    if horizons.contains(&0) {
        return Err(Error::invalid("horizons must be at least 1"));
    }
    let xs = features(exp, recipe)?;
    let mut out = McPredictions::zeros(horizons.len(), recipe.len());
    match mode {
        McMode::Online { alpha } => {
            let depth = horizons.iter().copied().max().unwrap_or(0);
            let mut pending: VecDeque<&[f64]> = VecDeque::with_capacity(depth + 1);
            for (t, x) in xs.iter().enumerate() {
                let bit = exp.observation(t)[SPECIAL_BIT];
                for (row, &h) in horizons.iter().enumerate() {
                    if let Some(back) = pending.len().checked_sub(h) {
                        out.delta(row, pending[back], bit, alpha);
                    }
                }
                pending.push_back(x);
                if pending.len() > depth {
                    pending.pop_front();
                }
            }
        }
        McMode::Batch => {
            let mut sums = Array2::<f64>::zeros((horizons.len(), recipe.len()));
            for (row, &h) in horizons.iter().enumerate() {
                for t in 0..xs.len().saturating_sub(h) {
                    let j = one_hot_index(&xs[t])?;
                    sums[[row, j]] += exp.observation(t + h)[SPECIAL_BIT];
                    out.updates[[row, j]] += 1;
                }
            }
            out.weights = sample_means(&sums, &out.updates);
        }
    }
    Ok(out)
}

fn sample_means(sums: &Array2<f64>, counts: &Array2<u32>) -> Array2<f64> {
    let mut w = sums.clone();
    for (v, &c) in w.iter_mut().zip(counts.iter()) {
        if c > 0 {
            *v /= c as f64;
        }
    }
    w
}

/// Streaming Monte Carlo for the action-conditional tree.
///
/// Rows follow the node order of [`QuestionNet::action_tree`]. The
/// prediction for sequence `σ` made at time `t` is updated only when
/// `a_t .. a_{t+|σ|-1}` is exactly `σ`, toward the bit seen `|σ|` steps
/// later.
///
/// [`QuestionNet::action_tree`]: crate::qnet::QuestionNet::action_tree
#[derive(Clone, Debug)]
pub struct McConditional {
    sequences: Vec<Vec<Action>>,
    depth: usize,
    alpha: f64,
    recipe: FeatureRecipe,
    preds: McPredictions,
    // (features at t, action taken at t), most recent last
    window: VecDeque<(Vec<f64>, Option<Action>)>,
    steps: usize,
}

impl McConditional {
    pub fn new(actions: &ActionSet, depth: usize, recipe: FeatureRecipe, alpha: f64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("tree depth must be at least 1"));
        }
        if recipe.uses_predictions() {
            return Err(Error::invalid("Monte Carlo features cannot feed back predictions"));
        }
        let sequences = tree_sequences(actions.len(), depth);
        let preds = McPredictions::zeros(sequences.len(), recipe.len());
        Ok(McConditional {
            sequences,
            depth,
            alpha,
            recipe,
            preds,
            window: VecDeque::with_capacity(depth + 1),
            steps: 0,
        })
    }

    pub fn sequences(&self) -> &[Vec<Action>] {
        &self.sequences
    }

    pub fn predictions(&self) -> &McPredictions {
        &self.preds
    }

    pub fn into_predictions(self) -> McPredictions {
        self.preds
    }

    /// Feeds `o_t` (with `a_{t-1}`, `None` for the first observation).
    pub fn observe(&mut self, a_prev: Option<Action>, o: &[f64]) -> Result<()> {
        if let (Some(a), Some(last)) = (a_prev, self.window.back_mut()) {
            last.1 = Some(a);
        }
        let bit = o[SPECIAL_BIT];
        let len = self.window.len();
        for (row, seq) in self.sequences.iter().enumerate() {
            let k = seq.len();
            if k > len {
                continue;
            }
            let matches = self
                .window
                .range(len - k..)
                .zip(seq)
                .all(|((_, taken), want)| *taken == Some(*want));
            if matches {
                let x = &self.window[len - k].0;
                self.preds.delta(row, x, bit, self.alpha);
            }
        }
        let x = self.recipe.build(a_prev, o, &[])?;
        self.window.push_back((x, None));
        if self.window.len() > self.depth {
            self.window.pop_front();
        }
        self.steps += 1;
        Ok(())
    }
}

/// Action-conditional Monte Carlo over a whole recorded sequence.
pub fn mc_train_conditional(
    exp: &Experience,
    actions: &ActionSet,
    depth: usize,
    recipe: &FeatureRecipe,
    mode: McMode,
) -> Result<McPredictions> {
    match mode {
        McMode::Online { alpha } => {
            let mut mc = McConditional::new(actions, depth, recipe.clone(), alpha)?;
            for t in 0..=exp.len() {
                let a_prev = t.checked_sub(1).map(|p| exp.action(p));
                mc.observe(a_prev, exp.observation(t))?;
            }
            Ok(mc.into_predictions())
        }
        McMode::Batch => {
            let sequences = tree_sequences(actions.len(), depth);
            let xs = features(exp, recipe)?;
            let mut out = McPredictions::zeros(sequences.len(), recipe.len());
            let mut sums = Array2::<f64>::zeros((sequences.len(), recipe.len()));
            for (row, seq) in sequences.iter().enumerate() {
                let k = seq.len();
                for t in 0..(exp.len() + 1).saturating_sub(k) {
                    if exp.actions()[t..t + k] == seq[..] {
                        let j = one_hot_index(&xs[t])?;
                        sums[[row, j]] += exp.observation(t + k)[SPECIAL_BIT];
                        out.updates[[row, j]] += 1;
                    }
                }
            }
            out.weights = sample_means(&sums, &out.updates);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_trace, BoundaryRule, ObsMode, WalkConfig};

    fn full() -> WalkConfig {
        WalkConfig::new(ObsMode::FullState, BoundaryRule::Stay)
    }

    fn experience_from_states(states: &[usize], actions: &[Action]) -> Experience {
        let cfg = full();
        Experience::new(states.iter().map(|&s| cfg.observe(s)).collect(), actions.to_vec()).unwrap()
    }

    #[test]
    fn update_opportunities_per_horizon() {
        // 50 observations, 49 actions
        let trace = generate_trace(full(), 49, 2);
        let recipe = FeatureRecipe::state_one_hot(7);
        let out = mc_train_unconditional(&trace.experience, &recipe, &[25, 1], McMode::Batch).unwrap();
        assert_eq!(out.total_updates(0), 25);
        assert_eq!(out.total_updates(1), 49);
        let online = mc_train_unconditional(
            &trace.experience,
            &recipe,
            &[25],
            McMode::Online { alpha: 0.1 },
        )
        .unwrap();
        assert_eq!(online.total_updates(0), 25);
    }

    #[test]
    fn constant_zero_outcomes_converge_to_zero() {
        // bounce between states 3 and 4; the special bit is never on
        let states: Vec<usize> = (0..41).map(|t| if t % 2 == 0 { 4 } else { 3 }).collect();
        let actions: Vec<Action> = (0..40)
            .map(|t| if t % 2 == 0 { Action::LEFT } else { Action::RIGHT })
            .collect();
        let exp = experience_from_states(&states, &actions);
        let recipe = FeatureRecipe::state_one_hot(7);
        let out = mc_train_unconditional(&exp, &recipe, &[3], McMode::Batch).unwrap();
        assert!(out.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn online_and_batch_agree_for_unit_step_on_first_visit() {
        let trace = generate_trace(full(), 300, 21);
        let recipe = FeatureRecipe::state_one_hot(7);
        let batch = mc_train_conditional(&trace.experience, &ActionSet::left_right(), 3, &recipe, McMode::Batch).unwrap();
        let online = mc_train_conditional(
            &trace.experience,
            &ActionSet::left_right(),
            3,
            &recipe,
            McMode::Online { alpha: 1.0 },
        )
        .unwrap();
        // deterministic outcomes: every sample from a cell is identical
        for (a, b) in batch.weights().iter().zip(online.weights().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(batch.updates, online.updates);
    }

    #[test]
    fn single_occurrence_is_learned_in_one_step() {
        // from state 4: L R L -> 3, 4, 3 ; then R R R R -> 4 5 6 7
        let states = [4, 3, 4, 3, 4, 5, 6, 7];
        let l = Action::LEFT;
        let r = Action::RIGHT;
        let actions = [l, r, l, r, r, r, r];
        let exp = experience_from_states(&states, &actions);
        let recipe = FeatureRecipe::state_one_hot(7);
        let out = mc_train_conditional(&exp, &ActionSet::left_right(), 3, &recipe, McMode::Online { alpha: 1.0 }).unwrap();
        let seqs = tree_sequences(2, 3);
        let row = |s: &[Action]| seqs.iter().position(|q| q == s).unwrap();
        let x4 = recipe.build(None, &full().observe(4), &[]).unwrap();
        let x1 = recipe.build(None, &full().observe(1), &[]).unwrap();
        assert_eq!(out.predict(&x4)[row(&[l, r, l])], 0.0);
        assert!(out.is_informed(row(&[l, r, l]), &x4));
        // R R R from 4 reaches 7
        assert_eq!(out.predict(&x4)[row(&[r, r, r])], 1.0);
        // never seen: stays at the initial value and uninformed
        assert_eq!(out.predict(&x1)[row(&[l, l, l])], 0.0);
        assert!(!out.is_informed(row(&[l, l, l]), &x1));
    }

    #[test]
    fn batch_rejects_dense_features() {
        let trace = generate_trace(full(), 20, 2);
        let recipe = FeatureRecipe::new(vec![crate::anet::FeaturePart::Bias, crate::anet::FeaturePart::StateOneHot { width: 7 }]).unwrap();
        assert!(mc_train_unconditional(&trace.experience, &recipe, &[1], McMode::Batch).is_err());
    }
}
