use ndarray::{Array2, ArrayView1};

use crate::anet::{Activation, AnswerNet};
use crate::env::Experience;
use crate::error::{Error, Result};
use crate::qnet::{Condition, QuestionNet, TargetSource};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOptions {
    pub alpha: f64,
    pub max_sweeps: usize,
    /// Stop once the largest weight change of a sweep falls below this.
    pub tolerance: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            alpha: 0.01,
            max_sweeps: 100_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub anet: AnswerNet,
    pub sweeps: usize,
    pub converged: bool,
    /// Largest absolute weight change applied in the final sweep.
    pub last_change: f64,
}

/// Batch TD: every sweep accumulates the updates of the whole recorded
/// sequence using the start-of-sweep weights, then applies their sum once.
///
/// Non-convergence (sweep cap or divergence) is reported through
/// [`BatchOutcome::converged`], not as an error.
pub fn train_batch(exp: &Experience, q: &QuestionNet, anet: AnswerNet, opts: BatchOptions) -> Result<BatchOutcome> {
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(Error::invalid(format!("batch step size must be positive, got {}", opts.alpha)));
    }
    anet.check_compatible(q)?;
    if exp.observation_width() != q.observation_width() {
        return Err(Error::invalid("experience and question network disagree on observation width"));
    }
    let stats = if anet.activation() == Activation::Identity && !anet.recipe().uses_predictions() {
        Some(LinearStats::collect(exp, q, &anet)?)
    } else {
        None
    };
    let mut anet = anet;
    let mut acc = Array2::zeros(anet.weights().raw_dim());
    let mut sweeps = 0;
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        match &stats {
            Some(stats) => stats.sweep(q, anet.weights(), &mut acc),
            None => sweep_along_sequence(exp, q, &anet, &mut acc)?,
        }
        acc.mapv_inplace(|v| v * opts.alpha);
        last_change = acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        *anet.weights_mut() += &acc;
        sweeps += 1;
        if !last_change.is_finite() || last_change > 1e100 {
            break;
        }
        if last_change < opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(BatchOutcome {
        anet,
        sweeps,
        converged,
        last_change,
    })
}

/// Summed (not yet step-size scaled) updates of one sweep, computed by
/// replaying the sequence.
pub fn sweep_along_sequence(exp: &Experience, q: &QuestionNet, anet: &AnswerNet, acc: &mut Array2<f64>) -> Result<()> {
    acc.fill(0.0);
    let n = q.len();
    let activation = anet.activation();
    let mut x = anet.features(None, exp.observation(0), &vec![0.0; n])?;
    let mut y = anet.forward(&x)?;
    let mut x_next = vec![0.0; x.len()];
    let mut y_next = vec![0.0; n];
    let mut z = vec![0.0; n];
    for t in 0..exp.len() {
        let a = exp.action(t);
        let o_next = exp.observation(t + 1);
        anet.recipe().build_into(Some(a), o_next, &y, &mut x_next)?;
        // weights are frozen for the sweep, so ỹ_{t+1} = y_{t+1}
        anet.forward_into(&x_next, &mut y_next)?;
        q.compute_targets_into(o_next, &y_next, &mut z)?;
        for (i, node) in q.nodes().iter().enumerate() {
            let scale = node.condition.value(a) * (z[i] - y[i]) * activation.slope_at_output(y[i]);
            if scale != 0.0 {
                for (g, &xj) in acc.row_mut(i).iter_mut().zip(&x) {
                    *g += scale * xj;
                }
            }
        }
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut y, &mut y_next);
    }
    Ok(())
}

/// Sufficient statistics of a recorded sequence for linear predictions on
/// prediction-free features, one set per distinct condition.
///
/// With `D = Σ c x_t x_tᵀ`, `N = Σ c x_{t+1} x_tᵀ` and `B = Σ c o_{t+1} x_tᵀ`
/// a sweep's summed update for row `i` is
/// `Σ_obs w B[b] + Σ_pred w (W_k N) − W_i D`.
#[derive(Clone, Debug)]
struct LinearStats {
    classes: Vec<ClassStats>,
    node_class: Vec<usize>,
}

#[derive(Clone, Debug)]
struct ClassStats {
    condition: Condition,
    d: Array2<f64>,
    n: Array2<f64>,
    b: Array2<f64>,
}

impl LinearStats {
    fn collect(exp: &Experience, q: &QuestionNet, anet: &AnswerNet) -> Result<Self> {
        let m = anet.m();
        let mut classes: Vec<ClassStats> = Vec::new();
        let mut node_class = Vec::with_capacity(q.len());
        for node in q.nodes() {
            let k = match classes.iter().position(|c| c.condition == node.condition) {
                Some(k) => k,
                None => {
                    classes.push(ClassStats {
                        condition: node.condition,
                        d: Array2::zeros((m, m)),
                        n: Array2::zeros((m, m)),
                        b: Array2::zeros((q.observation_width(), m)),
                    });
                    classes.len() - 1
                }
            };
            node_class.push(k);
        }
        let recipe = anet.recipe();
        let mut x = recipe.build(None, exp.observation(0), &[])?;
        for t in 0..exp.len() {
            let a = exp.action(t);
            let o_next = exp.observation(t + 1);
            let x_next = recipe.build(Some(a), o_next, &[])?;
            for class in &mut classes {
                let c = class.condition.value(a);
                if c == 0.0 {
                    continue;
                }
                for (j, &xj) in x.iter().enumerate() {
                    if xj == 0.0 {
                        continue;
                    }
                    for (l, &xl) in x.iter().enumerate() {
                        class.d[[l, j]] += c * xl * xj;
                    }
                    for (l, &xl) in x_next.iter().enumerate() {
                        class.n[[l, j]] += c * xl * xj;
                    }
                    for (b, &ob) in o_next.iter().enumerate() {
                        class.b[[b, j]] += c * ob * xj;
                    }
                }
            }
            x = x_next;
        }
        Ok(LinearStats { classes, node_class })
    }

    fn sweep(&self, q: &QuestionNet, w: &Array2<f64>, acc: &mut Array2<f64>) {
        for (i, node) in q.nodes().iter().enumerate() {
            let class = &self.classes[self.node_class[i]];
            let mut row = acc.row_mut(i);
            row.assign(&w.row(i).dot(&class.d));
            row.mapv_inplace(|v| -v);
            for term in &node.terms {
                match term.source {
                    TargetSource::ObservationBit(b) => {
                        row.scaled_add(term.weight, &class.b.row(b));
                    }
                    TargetSource::NextPrediction(k) => {
                        let wk: ArrayView1<f64> = w.row(k);
                        row.scaled_add(term.weight, &wk.dot(&class.n));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anet::FeatureRecipe;
    use crate::env::{generate_trace, ActionSet, BoundaryRule, ObsMode, WalkConfig};

    fn full() -> WalkConfig {
        WalkConfig::new(ObsMode::FullState, BoundaryRule::Stay)
    }

    #[test]
    fn statistics_sweep_matches_replay() {
        let trace = generate_trace(full(), 120, 11);
        let q = QuestionNet::action_tree(3, 8, ActionSet::left_right()).unwrap();
        let mut anet = AnswerNet::zeros(q.len(), Activation::Identity, FeatureRecipe::state_one_hot(7)).unwrap();
        for (k, w) in anet.weights_mut().iter_mut().enumerate() {
            *w = ((k * 37) % 11) as f64 / 11.0;
        }
        let stats = LinearStats::collect(&trace.experience, &q, &anet).unwrap();
        let mut fast = Array2::zeros(anet.weights().raw_dim());
        stats.sweep(&q, anet.weights(), &mut fast);
        let mut slow = Array2::zeros(anet.weights().raw_dim());
        sweep_along_sequence(&trace.experience, &q, &anet, &mut slow).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn large_step_size_is_flagged() {
        let trace = generate_trace(full(), 200, 5);
        let q = QuestionNet::chain(1, 8, ActionSet::left_right()).unwrap();
        let anet = AnswerNet::zeros(1, Activation::Identity, FeatureRecipe::state_one_hot(7)).unwrap();
        // the busiest state sees dozens of updates per sweep, so 1.0 is far
        // beyond the stable range
        let out = train_batch(
            &trace.experience,
            &q,
            anet,
            BatchOptions {
                alpha: 1.0,
                max_sweeps: 10_000,
                tolerance: 1e-12,
            },
        )
        .unwrap();
        assert!(!out.converged);
    }

    #[test]
    fn batch_is_deterministic() {
        let trace = generate_trace(full(), 100, 3);
        let q = QuestionNet::chain(5, 8, ActionSet::left_right()).unwrap();
        let anet = AnswerNet::zeros(5, Activation::Identity, FeatureRecipe::state_one_hot(7)).unwrap();
        let a = train_batch(&trace.experience, &q, anet.clone(), BatchOptions::default()).unwrap();
        let b = train_batch(&trace.experience, &q, anet, BatchOptions::default()).unwrap();
        assert!(a.converged);
        assert_eq!(a.anet, b.anet);
        assert_eq!(a.sweeps, b.sweeps);
    }

    #[test]
    fn rejects_bad_step_size() {
        let trace = generate_trace(full(), 10, 3);
        let q = QuestionNet::chain(1, 8, ActionSet::left_right()).unwrap();
        let anet = AnswerNet::zeros(1, Activation::Identity, FeatureRecipe::state_one_hot(7)).unwrap();
        let opts = BatchOptions {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(train_batch(&trace.experience, &q, anet, opts).is_err());
    }
}
