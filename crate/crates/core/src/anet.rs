//! Answer networks: feature construction and the linear-plus-squashing
//! prediction `y = σ(W x)`.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::env::{Action, SPECIAL_BIT};
use crate::error::{Error, Result};
use crate::qnet::QuestionNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeaturePart {
    /// A constant 1.
    Bias,
    /// The `width` one-hot state bits that follow the special bit.
    StateOneHot { width: usize },
    /// One-hot over (previous action, current special bit). All zero when
    /// there is no previous action.
    ActionObsPairOneHot { actions: usize },
    /// The previous step's predictions.
    PrevPredictions { n: usize },
}

impl FeaturePart {
    pub fn width(self) -> usize {
        match self {
            FeaturePart::Bias => 1,
            FeaturePart::StateOneHot { width } => width,
            FeaturePart::ActionObsPairOneHot { actions } => 2 * actions,
            FeaturePart::PrevPredictions { n } => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    parts: Vec<FeaturePart>,
}

impl FeatureRecipe {
    pub fn new(parts: Vec<FeaturePart>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("feature recipe has no parts"));
        }
        if parts.iter().any(|p| p.width() == 0) {
            return Err(Error::invalid("feature part with zero width"));
        }
        Ok(FeatureRecipe { parts })
    }

    /// Seven one-hot state components, nothing else.
    pub fn state_one_hot(states: usize) -> Self {
        FeatureRecipe {
            parts: vec![FeaturePart::StateOneHot { width: states }],
        }
    }

    /// Bias, the (action, bit) pair and the previous predictions.
    pub fn history(actions: usize, n: usize) -> Self {
        FeatureRecipe {
            parts: vec![
                FeaturePart::Bias,
                FeaturePart::ActionObsPairOneHot { actions },
                FeaturePart::PrevPredictions { n },
            ],
        }
    }

    pub fn parts(&self) -> &[FeaturePart] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.width()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn uses_predictions(&self) -> bool {
        self.parts
            .iter()
            .any(|p| matches!(p, FeaturePart::PrevPredictions { .. }))
    }

    pub fn prev_predictions_width(&self) -> Option<usize> {
        self.parts.iter().find_map(|p| match p {
            FeaturePart::PrevPredictions { n } => Some(*n),
            _ => None,
        })
    }

    pub fn feature_names(&self, action_labels: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for part in &self.parts {
            match *part {
                FeaturePart::Bias => names.push("bias".into()),
                FeaturePart::StateOneHot { width } => {
                    names.extend((1..=width).map(|s| format!("state:{s}")))
                }
                FeaturePart::ActionObsPairOneHot { actions } => {
                    for a in 0..actions {
                        let label = action_labels
                            .get(a)
                            .cloned()
                            .unwrap_or_else(|| a.to_string());
                        names.push(format!("pair:{label}/0"));
                        names.push(format!("pair:{label}/1"));
                    }
                }
                FeaturePart::PrevPredictions { n } => {
                    names.extend((0..n).map(|i| format!("prev:{i}")))
                }
            }
        }
        names
    }

    /// `x_t` from `a_{t-1}`, `o_t` and `y_{t-1}`. `a_prev` is `None` on the
    /// first step.
    pub fn build(&self, a_prev: Option<Action>, o: &[f64], y_prev: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.len()];
        self.build_into(a_prev, o, y_prev, &mut x)?;
        Ok(x)
    }

    pub fn build_into(
        &self,
        a_prev: Option<Action>,
        o: &[f64],
        y_prev: &[f64],
        x: &mut [f64],
    ) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::invalid("feature buffer has the wrong length"));
        }
        let mut at = 0;
        for part in &self.parts {
            let w = part.width();
            let block = &mut x[at..at + w];
            match *part {
                FeaturePart::Bias => block[0] = 1.0,
                FeaturePart::StateOneHot { width } => {
                    let bits = o.get(SPECIAL_BIT + 1..SPECIAL_BIT + 1 + width).ok_or_else(|| {
                        Error::invalid(format!(
                            "observation of width {} carries no {width} state bits",
                            o.len()
                        ))
                    })?;
                    let ones = bits.iter().filter(|&&b| b == 1.0).count();
                    if ones != 1 || bits.iter().any(|&b| b != 0.0 && b != 1.0) {
                        return Err(Error::invalid("state bits are not one-hot"));
                    }
                    block.copy_from_slice(bits);
                }
                FeaturePart::ActionObsPairOneHot { actions } => {
                    block.iter_mut().for_each(|v| *v = 0.0);
                    if let Some(a) = a_prev {
                        if a.0 >= actions {
                            return Err(Error::invalid(format!("unknown action {}", a.0)));
                        }
                        let bit = usize::from(o[SPECIAL_BIT] != 0.0);
                        block[2 * a.0 + bit] = 1.0;
                    }
                }
                FeaturePart::PrevPredictions { n } => {
                    if y_prev.len() != n {
                        return Err(Error::invalid(format!(
                            "previous predictions have length {}, recipe expects {n}",
                            y_prev.len()
                        )));
                    }
                    block.copy_from_slice(y_prev);
                }
            }
            at += w;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Logistic,
}

impl Activation {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Identity => s,
            Activation::Logistic => 1.0 / (1.0 + (-s).exp()),
        }
    }

    /// `dσ/ds` expressed through the output `y = σ(s)`.
    pub fn slope_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Logistic => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnswerNet {
    weights: Array2<f64>,
    activation: Activation,
    recipe: FeatureRecipe,
}

impl AnswerNet {
    /// Zero weights sized `n × recipe.len()`.
    pub fn zeros(n: usize, activation: Activation, recipe: FeatureRecipe) -> Result<Self> {
        let weights = Array2::zeros((n, recipe.len()));
        AnswerNet::with_weights(weights, activation, recipe)
    }

    pub fn with_weights(weights: Array2<f64>, activation: Activation, recipe: FeatureRecipe) -> Result<Self> {
        if weights.ncols() != recipe.len() {
            return Err(Error::invalid(format!(
                "weight matrix has {} columns, recipe produces {} features",
                weights.ncols(),
                recipe.len()
            )));
        }
        if let Some(k) = recipe.prev_predictions_width() {
            if k != weights.nrows() {
                return Err(Error::invalid(format!(
                    "recipe feeds back {k} predictions, network has {} nodes",
                    weights.nrows()
                )));
            }
        }
        Ok(AnswerNet {
            weights,
            activation,
            recipe,
        })
    }

    /// Checks the node count against a question network.
    pub fn check_compatible(&self, q: &QuestionNet) -> Result<()> {
        if self.n() != q.len() {
            return Err(Error::invalid(format!(
                "answer network has {} nodes, question network has {}",
                self.n(),
                q.len()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn m(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn recipe(&self) -> &FeatureRecipe {
        &self.recipe
    }

    pub fn features(&self, a_prev: Option<Action>, o: &[f64], y_prev: &[f64]) -> Result<Vec<f64>> {
        self.recipe.build(a_prev, o, y_prev)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n()];
        self.forward_into(x, &mut y)?;
        Ok(y)
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.m() || y.len() != self.n() {
            return Err(Error::invalid(format!(
                "forward expects {} features and {} outputs, got {} and {}",
                self.m(),
                self.n(),
                x.len(),
                y.len()
            )));
        }
        let x = ArrayView1::from(x);
        for (yi, row) in y.iter_mut().zip(self.weights.rows()) {
            *yi = self.activation.apply(row.dot(&x));
        }
        Ok(())
    }

    /// Row `i` holds `∂y^i/∂w^{ij}` for every `j`.
    pub fn prediction_gradient(&self, x: &[f64], y: &[f64]) -> Result<Array2<f64>> {
        if x.len() != self.m() || y.len() != self.n() {
            return Err(Error::invalid("gradient dimensions do not match the network"));
        }
        let x = Array1::from(x.to_vec());
        let mut grad = Array2::zeros((self.n(), self.m()));
        for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
            row.assign(&(&x * self.activation.slope_at_output(y[i])));
        }
        Ok(grad)
    }

    /// `node,feature,weight` rows.
    pub fn write_weights_csv<W: Write>(&self, q: &QuestionNet, out: W) -> Result<()> {
        self.check_compatible(q)?;
        let names = self.recipe.feature_names(q.actions().labels());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "feature", "weight"])?;
        for (i, row) in self.weights.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([q.node(i).label.as_str(), names[j].as_str(), &v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<weights csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionSet, BoundaryRule, ObsMode, WalkConfig};
    use proptest::prelude::*;

    #[test]
    fn state_one_hot_features() {
        let recipe = FeatureRecipe::state_one_hot(7);
        let o = WalkConfig::new(ObsMode::FullState, BoundaryRule::Stay).observe(3);
        let x = recipe.build(None, &o, &[]).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(recipe.build(None, &[0.0], &[]).is_err());
    }

    #[test]
    fn history_features() {
        let recipe = FeatureRecipe::history(2, 6);
        assert_eq!(recipe.len(), 11);
        let y_prev = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let x = recipe.build(Some(Action::LEFT), &[0.0], &y_prev).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(&x[1..5], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&x[5..], &y_prev);
        let x = recipe.build(Some(Action::RIGHT), &[1.0], &y_prev).unwrap();
        assert_eq!(&x[1..5], &[0.0, 0.0, 0.0, 1.0]);
        // the null first action leaves the pair block empty
        let x = recipe.build(None, &[1.0], &[0.0; 6]).unwrap();
        assert_eq!(&x[1..5], &[0.0; 4]);
        assert!(recipe.build(Some(Action::LEFT), &[0.0], &[0.0; 5]).is_err());
    }

    #[test]
    fn history_feature_lengths() {
        for (depth, m) in [(2, 11), (3, 19), (4, 35)] {
            let n: usize = (1..=depth).map(|d| 2usize.pow(d)).sum();
            assert_eq!(FeatureRecipe::history(2, n).len(), m);
        }
    }

    #[test]
    fn forward_closed_forms() {
        let recipe = FeatureRecipe::new(vec![FeaturePart::Bias]).unwrap();
        let id = AnswerNet::zeros(3, Activation::Identity, recipe.clone()).unwrap();
        assert_eq!(id.forward(&[1.0]).unwrap(), vec![0.0; 3]);
        let mut lg = AnswerNet::zeros(3, Activation::Logistic, recipe).unwrap();
        assert_eq!(lg.forward(&[1.0]).unwrap(), vec![0.5; 3]);
        lg.weights_mut()[[1, 0]] = 3f64.ln();
        assert!((lg.forward(&[1.0]).unwrap()[1] - 0.75).abs() < 1e-15);
        assert!(lg.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradients_closed_forms() {
        let recipe = FeatureRecipe::state_one_hot(3);
        let id = AnswerNet::zeros(2, Activation::Identity, recipe.clone()).unwrap();
        let x = [0.0, 1.0, 0.0];
        let g = id.prediction_gradient(&x, &id.forward(&x).unwrap()).unwrap();
        assert_eq!(g.row(0).to_vec(), x);
        assert_eq!(g.row(1).to_vec(), x);

        let lg = AnswerNet::zeros(2, Activation::Logistic, recipe).unwrap();
        let x = [0.3, -1.0, 2.0];
        let g = lg.prediction_gradient(&x, &[0.5, 0.5]).unwrap();
        assert_eq!(g.row(0).to_vec(), vec![0.075, -0.25, 0.5]);
    }

    #[test]
    fn recipe_validation() {
        assert!(FeatureRecipe::new(vec![]).is_err());
        let recipe = FeatureRecipe::history(2, 4);
        assert!(AnswerNet::zeros(3, Activation::Logistic, recipe.clone()).is_err());
        assert!(AnswerNet::zeros(4, Activation::Logistic, recipe).is_ok());
    }

    #[test]
    fn weights_csv_layout() {
        let q = crate::qnet::QuestionNet::action_tree(1, 8, ActionSet::left_right()).unwrap();
        let mut net = AnswerNet::zeros(2, Activation::Identity, FeatureRecipe::state_one_hot(7)).unwrap();
        net.weights_mut()[[1, 6]] = 0.25;
        let mut buf = Vec::new();
        net.write_weights_csv(&q, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "node,feature,weight");
        assert_eq!(lines.len(), 1 + 14);
        assert_eq!(lines[14], "R,state:7,0.25");
    }

    proptest! {
        #[test]
        fn logistic_outputs_stay_inside_unit_interval(
            w in proptest::collection::vec(-5.0f64..5.0, 12),
            x in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let recipe = FeatureRecipe::new(vec![FeaturePart::PrevPredictions { n: 3 }, FeaturePart::Bias]).unwrap();
            let net = AnswerNet::with_weights(
                Array2::from_shape_vec((3, 4), w).unwrap(),
                Activation::Logistic,
                recipe,
            ).unwrap();
            let y = net.forward(&x).unwrap();
            prop_assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn one_hot_blocks_have_a_single_one(
            a in proptest::option::of(0usize..2),
            bit in any::<bool>(),
            state in 1usize..=7,
        ) {
            let recipe = FeatureRecipe::new(vec![
                FeaturePart::StateOneHot { width: 7 },
                FeaturePart::ActionObsPairOneHot { actions: 2 },
            ]).unwrap();
            let mut o = WalkConfig::new(ObsMode::FullState, BoundaryRule::Stay).observe(state);
            o[SPECIAL_BIT] = f64::from(u8::from(bit));
            let x = recipe.build(a.map(Action), &o, &[]).unwrap();
            prop_assert_eq!(x[..7].iter().filter(|&&v| v == 1.0).count(), 1);
            let expected = usize::from(a.is_some());
            prop_assert_eq!(x[7..].iter().filter(|&&v| v == 1.0).count(), expected);
        }
    }
}
