use ndarray::Array2;

use crate::anet::{AnswerNet, FeatureRecipe};
use crate::env::{HiddenStates, WalkConfig, NUM_STATES};
use crate::error::Result;
use crate::learner::McPredictions;
use crate::oracle::Weighting;

use super::config::WeightingChoice;

/// Feature vectors of states 1..=7 for a recipe that reads only the
/// current observation.
pub fn state_features(recipe: &FeatureRecipe, walk: WalkConfig) -> Result<Vec<Vec<f64>>> {
    (1..=NUM_STATES)
        .map(|s| recipe.build(None, &walk.observe(s), &[]))
        .collect()
}

/// Per-state predictions (`[[s - 1, i]]`) of a state-feature answer network.
pub fn answer_table(anet: &AnswerNet, xs: &[Vec<f64>]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((NUM_STATES, anet.n()));
    for (s, x) in xs.iter().enumerate() {
        let y = anet.forward(x)?;
        out.row_mut(s).assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(out)
}

/// Per-state Monte Carlo predictions, one column per learner row.
pub fn mc_table(preds: &McPredictions, xs: &[Vec<f64>]) -> Array2<f64> {
    let rows = preds.weights().nrows();
    let mut out = Array2::zeros((NUM_STATES, rows));
    for (s, x) in xs.iter().enumerate() {
        for (i, v) in preds.predict(x).into_iter().enumerate() {
            out[[s, i]] = v;
        }
    }
    out
}

pub fn weighting(choice: WeightingChoice, hidden: &HiddenStates) -> Weighting {
    match choice {
        WeightingChoice::Uniform => Weighting::UniformStates,
        WeightingChoice::Visitation => Weighting::Visitation(hidden.visitation()),
    }
}

pub fn other(choice: WeightingChoice) -> WeightingChoice {
    match choice {
        WeightingChoice::Uniform => WeightingChoice::Visitation,
        WeightingChoice::Visitation => WeightingChoice::Uniform,
    }
}
