//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the learners' update code.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdnet::anet::{Activation, AnswerNet, FeaturePart, FeatureRecipe};
use tdnet::env::{Action, Experience};
use tdnet::learner::TdState;
use tdnet::qnet::{QuestionNet, TargetSource};

/// Largest relative error between analytic prediction gradients and
/// central finite differences with step `h`, over `instances` random
/// networks of each activation.
pub fn max_gradient_error(instances: usize, h: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let activation = if k % 2 == 0 { Activation::Logistic } else { Activation::Identity };
        let n = rng.gen_range(1..6);
        let m = rng.gen_range(1..9);
        // forward() takes x directly, so the recipe only fixes the width
        let recipe = FeatureRecipe::new(vec![FeaturePart::StateOneHot { width: m }]).unwrap();
        let weights = Array2::from_shape_fn((n, m), |_| rng.gen_range(-2.0..2.0));
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let net = AnswerNet::with_weights(weights.clone(), activation, recipe.clone()).unwrap();
        let y = net.forward(&x).unwrap();
        let grad = net.prediction_gradient(&x, &y).unwrap();
        for i in 0..n {
            for j in 0..m {
                let eval = |delta: f64| {
                    let mut w = weights.clone();
                    w[[i, j]] += delta;
                    AnswerNet::with_weights(w, activation, recipe.clone())
                        .unwrap()
                        .forward(&x)
                        .unwrap()[i]
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grad[[i, j]];
                let scale = analytic.abs().max(numeric.abs()).max(1e-12);
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    worst
}

/// Solves the batch linear TD fixed point `Σ_t c (z_t - W x_t) x_tᵀ = 0`
/// for identity-activation networks on prediction-free features by
/// Gaussian elimination. `None` if the system is singular.
pub fn solve_linear_td(exp: &Experience, q: &QuestionNet, recipe: &FeatureRecipe) -> Option<Array2<f64>> {
    let n = q.len();
    let m = recipe.len();
    let dim = n * m;
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    let feats = |t: usize| {
        let prev = if t == 0 { None } else { Some(exp.action(t - 1)) };
        recipe.build(prev, exp.observation(t), &[]).unwrap()
    };
    for t in 0..exp.len() {
        let act = exp.action(t);
        let x = feats(t);
        let x_next = feats(t + 1);
        let o_next = exp.observation(t + 1);
        for (i, node) in q.nodes().iter().enumerate() {
            let c = node.condition.value(act);
            if c == 0.0 {
                continue;
            }
            for j in 0..m {
                let row = i * m + j;
                for l in 0..m {
                    a[row][i * m + l] -= c * x[l] * x[j];
                }
                for term in &node.terms {
                    match term.source {
                        TargetSource::ObservationBit(bit) => b[row] -= c * term.weight * o_next[bit] * x[j],
                        TargetSource::NextPrediction(k) => {
                            for l in 0..m {
                                a[row][k * m + l] += c * term.weight * x_next[l] * x[j];
                            }
                        }
                    }
                }
            }
        }
    }
    let w = gaussian_elimination(a, b)?;
    Some(Array2::from_shape_vec((n, m), w).unwrap())
}

fn gaussian_elimination(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let dim = b.len();
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..dim {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..dim {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for r in (0..dim).rev() {
        let s: f64 = (r + 1..dim).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Outcome of one forced large TD step.
pub struct TimingProbe {
    /// |stored ỹ_{t+1} - prediction of x_{t+1} under the old weights|.
    pub against_old: f64,
    /// |stored ỹ_{t+1} - prediction of x_{t+1} under the updated weights|.
    pub against_new: f64,
    /// Largest weight change applied by the step.
    pub update_size: f64,
}

/// Takes one step with a bias feature shared by `x_t` and `x_{t+1}` and a
/// large step size, so the update must move the next-step prediction.
pub fn timing_probe() -> TimingProbe {
    let q = QuestionNet::chain(2, 8, tdnet::env::ActionSet::left_right()).unwrap();
    let recipe = FeatureRecipe::new(vec![
        FeaturePart::Bias,
        FeaturePart::StateOneHot { width: 7 },
    ])
    .unwrap();
    let w0 = Array2::from_shape_fn((2, 8), |(i, j)| 0.1 * (i + 1) as f64 + 0.01 * j as f64);
    let anet = AnswerNet::with_weights(w0, Activation::Identity, recipe.clone()).unwrap();
    let walk = tdnet::env::WalkConfig::new(tdnet::env::ObsMode::FullState, tdnet::env::BoundaryRule::Stay);
    let o_t = walk.observe(2);
    let o_next = walk.observe(1);
    let x_next = recipe.build(Some(Action::LEFT), &o_next, &[]).unwrap();
    let old = anet.forward(&x_next).unwrap();

    let mut td = TdState::new(&q, anet, 5.0, &o_t).unwrap();
    let (view, delta) = td.step_with_delta(Action::LEFT, &o_next).unwrap();
    let stored = view.y_tilde_next.to_vec();
    let new = td.answer_net().forward(&x_next).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    TimingProbe {
        against_old: diff(&stored, &old),
        against_new: diff(&stored, &new),
        update_size: delta.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}
