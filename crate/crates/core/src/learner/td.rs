use std::io::Write;

use ndarray::Array2;

use crate::anet::AnswerNet;
use crate::env::{Action, Experience};
use crate::error::{Error, Result};
use crate::qnet::QuestionNet;

/// Per-step quantities of one TD-network update.
#[derive(Clone, Copy, Debug)]
pub struct StepView<'a> {
    /// `y_t`, the predictions being corrected.
    pub y: &'a [f64],
    /// `c_t`.
    pub conditions: &'a [f64],
    /// `ỹ_{t+1}`, computed with the weights from before the update.
    pub y_tilde_next: &'a [f64],
    /// `z_t`.
    pub targets: &'a [f64],
}

/// A TD network in the middle of an experience stream.
///
/// Holds `y_t` together with the feature vector `x_t` that produced it,
/// since the update differentiates `y_t`.
#[derive(Clone, Debug)]
pub struct TdState<'q> {
    q: &'q QuestionNet,
    anet: AnswerNet,
    alpha: f64,
    a_prev: Option<Action>,
    x: Vec<f64>,
    y: Vec<f64>,
    // scratch for the step in flight
    y_old: Vec<f64>,
    x_next: Vec<f64>,
    y_tilde: Vec<f64>,
    z: Vec<f64>,
    c: Vec<f64>,
}

impl<'q> TdState<'q> {
    /// Starts a stream at `o_1` with `y_0 = 0` and no previous action.
    pub fn new(q: &'q QuestionNet, anet: AnswerNet, alpha: f64, o_first: &[f64]) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size must be finite and >= 0, got {alpha}")));
        }
        anet.check_compatible(q)?;
        let n = q.len();
        let x = anet.features(None, o_first, &vec![0.0; n])?;
        let y = anet.forward(&x)?;
        Ok(TdState {
            q,
            alpha,
            a_prev: None,
            x_next: vec![0.0; x.len()],
            x,
            y,
            y_old: vec![0.0; n],
            y_tilde: vec![0.0; n],
            z: vec![0.0; n],
            c: vec![0.0; n],
            anet,
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn answer_net(&self) -> &AnswerNet {
        &self.anet
    }

    pub fn into_answer_net(self) -> AnswerNet {
        self.anet
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `a_{t-1}`; `None` before the first step.
    pub fn last_action(&self) -> Option<Action> {
        self.a_prev
    }

    /// Takes action `a_t`, sees `o_{t+1}`, and moves to `y_{t+1}`.
    ///
    /// Order: `c_t`, `x_{t+1}`, `ỹ_{t+1}` (old weights), `z_t`, `W_{t+1}`,
    /// `y_{t+1}` (new weights).
    pub fn step(&mut self, a: Action, o_next: &[f64]) -> Result<StepView<'_>> {
        self.step_impl(a, o_next, None)
    }

    /// Like [`step`](Self::step) but also returns the weight change.
    pub fn step_with_delta(&mut self, a: Action, o_next: &[f64]) -> Result<(StepView<'_>, Array2<f64>)> {
        let mut delta = Array2::zeros(self.anet.weights().raw_dim());
        self.step_impl(a, o_next, Some(&mut delta))?;
        Ok((self.view(), delta))
    }

    fn view(&self) -> StepView<'_> {
        StepView {
            y: &self.y_old,
            conditions: &self.c,
            y_tilde_next: &self.y_tilde,
            targets: &self.z,
        }
    }

    fn step_impl(&mut self, a: Action, o_next: &[f64], mut delta: Option<&mut Array2<f64>>) -> Result<StepView<'_>> {
        let q = self.q;
        if !q.actions().contains(a) {
            return Err(Error::invalid(format!("unknown action {}", a.0)));
        }
        for (ci, node) in self.c.iter_mut().zip(q.nodes()) {
            *ci = node.condition.value(a);
        }
        self.anet
            .recipe()
            .build_into(Some(a), o_next, &self.y, &mut self.x_next)?;
        self.anet.forward_into(&self.x_next, &mut self.y_tilde)?;
        q.compute_targets_into(o_next, &self.y_tilde, &mut self.z)?;

        let activation = self.anet.activation();
        let weights = self.anet.weights_mut();
        for i in 0..q.len() {
            if self.c[i] == 0.0 {
                continue;
            }
            let scale = self.alpha
                * (self.z[i] - self.y[i])
                * self.c[i]
                * activation.slope_at_output(self.y[i]);
            if scale == 0.0 {
                continue;
            }
            let mut row = weights.row_mut(i);
            for (w, &xj) in row.iter_mut().zip(&self.x) {
                *w += scale * xj;
            }
            if let Some(d) = delta.as_deref_mut() {
                for (dw, &xj) in d.row_mut(i).iter_mut().zip(&self.x) {
                    *dw = scale * xj;
                }
            }
        }

        std::mem::swap(&mut self.y_old, &mut self.y);
        self.anet.forward_into(&self.x_next, &mut self.y)?;
        std::mem::swap(&mut self.x, &mut self.x_next);
        self.a_prev = Some(a);
        Ok(self.view())
    }
}

/// Runs [`TdState::step`] along an experience stream, calling `observe`
/// with the step index (0-based) after every update.
pub fn train_online_with<F>(
    exp: &Experience,
    q: &QuestionNet,
    anet: AnswerNet,
    alpha: f64,
    mut observe: F,
) -> Result<AnswerNet>
where
    F: FnMut(usize, &StepView<'_>),
{
    let mut state = TdState::new(q, anet, alpha, exp.observation(0))?;
    for t in 0..exp.len() {
        let view = state.step(exp.action(t), exp.observation(t + 1))?;
        observe(t, &view);
    }
    Ok(state.into_answer_net())
}

/// Online training that keeps the full prediction log.
pub fn train_online(
    exp: &Experience,
    q: &QuestionNet,
    anet: AnswerNet,
    alpha: f64,
) -> Result<(AnswerNet, PredictionLog)> {
    let mut log = PredictionLog::new(q.len());
    let anet = train_online_with(exp, q, anet, alpha, |_, view| log.push(view))?;
    Ok((anet, log))
}

/// Rows of `(y_t, ỹ_{t+1}, z_t, c_t)`, one per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionLog {
    n: usize,
    y: Vec<f64>,
    y_tilde: Vec<f64>,
    z: Vec<f64>,
    c: Vec<f64>,
}

impl PredictionLog {
    pub fn new(n: usize) -> Self {
        PredictionLog {
            n,
            ..Default::default()
        }
    }

    pub fn push(&mut self, view: &StepView<'_>) {
        self.y.extend_from_slice(view.y);
        self.y_tilde.extend_from_slice(view.y_tilde_next);
        self.z.extend_from_slice(view.targets);
        self.c.extend_from_slice(view.conditions);
    }

    pub fn len(&self) -> usize {
        self.y.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y(&self, t: usize) -> &[f64] {
        &self.y[t * self.n..(t + 1) * self.n]
    }

    pub fn y_tilde(&self, t: usize) -> &[f64] {
        &self.y_tilde[t * self.n..(t + 1) * self.n]
    }

    pub fn z(&self, t: usize) -> &[f64] {
        &self.z[t * self.n..(t + 1) * self.n]
    }

    pub fn c(&self, t: usize) -> &[f64] {
        &self.c[t * self.n..(t + 1) * self.n]
    }

    /// `t,node,y,y_tilde,z,c` with 1-based `t`.
    pub fn write_csv<W: Write>(&self, q: &QuestionNet, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "node", "y", "y_tilde", "z", "c"])?;
        for t in 0..self.len() {
            for i in 0..self.n {
                w.write_record([
                    (t + 1).to_string(),
                    q.node(i).label.clone(),
                    self.y(t)[i].to_string(),
                    self.y_tilde(t)[i].to_string(),
                    self.z(t)[i].to_string(),
                    self.c(t)[i].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<prediction log>", e))?;
        Ok(())
    }
}
