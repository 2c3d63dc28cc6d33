//! The seven-state continuing random walk and experience generation.
//!
//! States are numbered `1..=7` left to right. The observation on arriving in
//! a state always carries the special bit at index 0, which is 1 only in the
//! two end states. In [`ObsMode::FullState`] seven one-hot state bits follow.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_STATES: usize = 7;
pub const CENTER_STATE: usize = 4;
/// Index of the special end-of-walk bit in every observation vector.
pub const SPECIAL_BIT: usize = 0;

/// Index into an [`ActionSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub usize);

impl Action {
    pub const LEFT: Action = Action(0);
    pub const RIGHT: Action = Action(1);
}

/// Ordered, labelled set of discrete actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    labels: Vec<String>,
}

impl ActionSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::invalid("action set must not be empty"));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::invalid(format!("action {i} has an empty label")));
            }
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("duplicate action label {l:?}")));
            }
        }
        Ok(ActionSet { labels })
    }

    /// The walk's `{L, R}` set.
    pub fn left_right() -> Self {
        ActionSet {
            labels: vec!["L".into(), "R".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, a: Action) -> bool {
        a.0 < self.labels.len()
    }

    pub fn label(&self, a: Action) -> &str {
        &self.labels[a.0]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lookup(&self, label: &str) -> Option<Action> {
        self.labels.iter().position(|l| l == label).map(Action)
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        (0..self.labels.len()).map(Action)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// Special bit plus seven one-hot state bits.
    #[default]
    FullState,
    /// Special bit only; the walk is then non-Markov in the observations.
    BitOnly,
}

impl ObsMode {
    pub fn width(self) -> usize {
        match self {
            ObsMode::FullState => 1 + NUM_STATES,
            ObsMode::BitOnly => 1,
        }
    }
}

/// What happens when an action points off the end of the walk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// The state is left unchanged.
    #[default]
    Stay,
    /// The walk bounces back to the neighbouring interior state.
    Reflect,
}

impl BoundaryRule {
    pub fn next_state(self, state: usize, a: Action) -> usize {
        debug_assert!((1..=NUM_STATES).contains(&state));
        let target = if a == Action::LEFT {
            state as isize - 1
        } else {
            state as isize + 1
        };
        if (1..=NUM_STATES as isize).contains(&target) {
            return target as usize;
        }
        match self {
            BoundaryRule::Stay => state,
            BoundaryRule::Reflect if target < 1 => 2,
            BoundaryRule::Reflect => NUM_STATES - 1,
        }
    }
}

impl fmt::Display for BoundaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryRule::Stay => "stay",
            BoundaryRule::Reflect => "reflect",
        })
    }
}

impl FromStr for BoundaryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stay" => Ok(BoundaryRule::Stay),
            "reflect" => Ok(BoundaryRule::Reflect),
            other => Err(Error::invalid(format!("unknown boundary rule {other:?}"))),
        }
    }
}

/// Static description of a walk; enough for the oracles to reason about it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub obs_mode: ObsMode,
    pub boundary: BoundaryRule,
}

impl WalkConfig {
    pub fn new(obs_mode: ObsMode, boundary: BoundaryRule) -> Self {
        WalkConfig { obs_mode, boundary }
    }

    pub fn special_bit(state: usize) -> f64 {
        if state == 1 || state == NUM_STATES {
            1.0
        } else {
            0.0
        }
    }

    pub fn observe(&self, state: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.obs_mode.width()];
        o[SPECIAL_BIT] = Self::special_bit(state);
        if self.obs_mode == ObsMode::FullState {
            o[state] = 1.0;
        }
        o
    }
}

#[derive(Clone, Debug)]
pub struct RandomWalkEnv {
    config: WalkConfig,
    state: usize,
}

impl RandomWalkEnv {
    pub fn new(config: WalkConfig) -> Self {
        RandomWalkEnv {
            config,
            state: CENTER_STATE,
        }
    }

    pub fn config(&self) -> WalkConfig {
        self.config
    }

    pub fn actions(&self) -> ActionSet {
        ActionSet::left_right()
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.state = CENTER_STATE;
        self.config.observe(self.state)
    }

    /// Continuing task: no step ever terminates.
    pub fn step(&mut self, a: Action) -> Vec<f64> {
        assert!(a.0 < 2, "the walk only has L and R actions");
        self.state = self.config.boundary.next_state(self.state, a);
        self.config.observe(self.state)
    }

    pub(crate) fn hidden_state(&self) -> usize {
        self.state
    }
}

/// Uniform random choice between L and R.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn act(&mut self) -> Action {
        Action(self.rng.gen_range(0..2))
    }
}

/// The observable experience stream `o_1, a_1, o_2, a_2, ..., o_{T+1}`.
///
/// This is all a learner ever sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    observations: Vec<Vec<f64>>,
    actions: Vec<Action>,
}

impl Experience {
    pub fn new(observations: Vec<Vec<f64>>, actions: Vec<Action>) -> Result<Self> {
        if observations.len() != actions.len() + 1 {
            return Err(Error::invalid(format!(
                "experience needs one more observation than actions, got {} and {}",
                observations.len(),
                actions.len()
            )));
        }
        if let Some(w) = observations.first().map(Vec::len) {
            if observations.iter().any(|o| o.len() != w) {
                return Err(Error::invalid("observations have inconsistent widths"));
            }
        }
        Ok(Experience {
            observations,
            actions,
        })
    }

    /// Number of actions (transitions).
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.observations[t]
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn action(&self, t: usize) -> Action {
        self.actions[t]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn observation_width(&self) -> usize {
        self.observations[0].len()
    }

    /// Keeps the first `steps` transitions.
    pub fn truncated(&self, steps: usize) -> Experience {
        let steps = steps.min(self.len());
        Experience {
            observations: self.observations[..=steps].to_vec(),
            actions: self.actions[..steps].to_vec(),
        }
    }
}

/// Hidden walk states aligned with the observations of an [`Experience`].
///
/// Kept in a separate type so learner APIs, which take `&Experience`, have
/// no path to them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenStates(Vec<usize>);

impl HiddenStates {
    pub fn get(&self, t: usize) -> usize {
        self.0[t]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fraction of time steps spent in each state, indexed `0..7` for
    /// states `1..=7`.
    pub fn visitation(&self) -> [f64; NUM_STATES] {
        let mut freq = [0.0; NUM_STATES];
        for &s in &self.0 {
            freq[s - 1] += 1.0;
        }
        let n = self.0.len().max(1) as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        freq
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub config: WalkConfig,
    pub experience: Experience,
    pub hidden: HiddenStates,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.experience.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experience.is_empty()
    }

    pub fn truncated(&self, steps: usize) -> Trace {
        let steps = steps.min(self.len());
        Trace {
            config: self.config,
            experience: self.experience.truncated(steps),
            hidden: HiddenStates(self.hidden.0[..=steps].to_vec()),
        }
    }

    /// Writes `t,state,obs_bits,action`; the final row has an empty action.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "state", "obs_bits", "action"])?;
        let labels = ActionSet::left_right();
        for t in 0..=self.len() {
            let bits: String = self
                .experience
                .observation(t)
                .iter()
                .map(|&b| if b != 0.0 { '1' } else { '0' })
                .collect();
            let action = if t < self.len() {
                labels.label(self.experience.action(t)).to_string()
            } else {
                String::new()
            };
            w.write_record([
                (t + 1).to_string(),
                self.hidden.get(t).to_string(),
                bits,
                action,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, boundary: BoundaryRule) -> Result<Trace> {
        let mut r = csv::Reader::from_reader(input);
        let labels = ActionSet::left_right();
        let mut observations = Vec::new();
        let mut actions = Vec::new();
        let mut hidden = Vec::new();
        let mut finished = false;
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if finished {
                return Err(Error::Parse(format!(
                    "trace row {}: only the final row may omit the action",
                    row + 1
                )));
            }
            let field = |i: usize| rec.get(i).unwrap_or("");
            let state: usize = field(1)
                .parse()
                .ok()
                .filter(|s| (1..=NUM_STATES).contains(s))
                .ok_or_else(|| Error::Parse(format!("trace row {}: bad state", row + 1)))?;
            let obs = field(2)
                .chars()
                .map(|c| match c {
                    '0' => Ok(0.0),
                    '1' => Ok(1.0),
                    _ => Err(Error::Parse(format!("trace row {}: bad obs bit", row + 1))),
                })
                .collect::<Result<Vec<f64>>>()?;
            match field(3) {
                "" => finished = true,
                label => actions.push(labels.lookup(label).ok_or_else(|| {
                    Error::Parse(format!("trace row {}: unknown action {label:?}", row + 1))
                })?),
            }
            observations.push(obs);
            hidden.push(state);
        }
        if !finished {
            return Err(Error::Parse("trace is missing its final observation row".into()));
        }
        let obs_mode = match observations[0].len() {
            1 => ObsMode::BitOnly,
            8 => ObsMode::FullState,
            w => return Err(Error::Parse(format!("unsupported observation width {w}"))),
        };
        let config = WalkConfig::new(obs_mode, boundary);
        for (t, (o, &s)) in observations.iter().zip(&hidden).enumerate() {
            if *o != config.observe(s) {
                return Err(Error::Parse(format!(
                    "trace row {}: observation does not match state {s}",
                    t + 1
                )));
            }
        }
        Ok(Trace {
            config,
            experience: Experience::new(observations, actions)?,
            hidden: HiddenStates(hidden),
        })
    }
}

/// Resets to the centre and takes `length` random actions.
pub fn generate_trace(config: WalkConfig, length: usize, seed: u64) -> Trace {
    let mut env = RandomWalkEnv::new(config);
    let mut policy = RandomPolicy::new(seed);
    let mut observations = Vec::with_capacity(length + 1);
    let mut actions = Vec::with_capacity(length);
    let mut hidden = Vec::with_capacity(length + 1);
    observations.push(env.reset());
    hidden.push(env.hidden_state());
    for _ in 0..length {
        let a = policy.act();
        actions.push(a);
        observations.push(env.step(a));
        hidden.push(env.hidden_state());
    }
    Trace {
        config,
        experience: Experience {
            observations,
            actions,
        },
        hidden: HiddenStates(hidden),
    }
}
