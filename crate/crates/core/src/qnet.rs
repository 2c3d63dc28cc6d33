//! Question networks: what each node predicts.
//!
//! Every node's target is an affine combination of next-step observation
//! bits and next-step predictions, and every node is gated by a condition
//! on the action taken. Self-references are legal.
//!
//! # File format
//!
//! Networks are stored as TOML:
//!
//! ```toml
//! observation_width = 8
//! actions = ["L", "R"]
//!
//! [[nodes]]
//! label = "L"
//! condition = "action:L"
//! terms = [{ source = "obs:0", weight = 1.0 }]
//!
//! [[nodes]]
//! label = "LR"
//! condition = "action:L"
//! terms = [{ source = "pred:R", weight = 1.0 }]
//! ```
//!
//! `condition` is `"always"` or `"action:<label>"`. A term source is
//! `"obs:<bit>"` or `"pred:<node>"`, where `<node>` is matched against node
//! labels first and otherwise read as a zero-based node index. Labels must
//! be unique.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSet, SPECIAL_BIT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSource {
    ObservationBit(usize),
    NextPrediction(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetTerm {
    pub source: TargetSource,
    pub weight: f64,
}

impl TargetTerm {
    pub fn obs(bit: usize, weight: f64) -> Self {
        TargetTerm {
            source: TargetSource::ObservationBit(bit),
            weight,
        }
    }

    pub fn pred(node: usize, weight: f64) -> Self {
        TargetTerm {
            source: TargetSource::NextPrediction(node),
            weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Always,
    ActionIs(Action),
}

impl Condition {
    pub fn value(self, a: Action) -> f64 {
        match self {
            Condition::Always => 1.0,
            Condition::ActionIs(b) if a == b => 1.0,
            Condition::ActionIs(_) => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub label: String,
    pub terms: Vec<TargetTerm>,
    pub condition: Condition,
}

impl NodeSpec {
    /// Nonnegative weights summing to one keep targets inside `[0, 1]`.
    pub fn has_probability_semantics(&self) -> bool {
        let sum: f64 = self.terms.iter().map(|t| t.weight).sum();
        self.terms.iter().all(|t| t.weight >= 0.0) && (sum - 1.0).abs() < 1e-12
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionNet {
    observation_width: usize,
    actions: ActionSet,
    nodes: Vec<NodeSpec>,
}

impl QuestionNet {
    /// Validates every index and label before accepting the network.
    pub fn new(observation_width: usize, actions: ActionSet, nodes: Vec<NodeSpec>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("question network has no nodes"));
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if nodes[..i].iter().any(|other| other.label == node.label) {
                return Err(Error::invalid(format!(
                    "node {i}: duplicate label {:?}",
                    node.label
                )));
            }
            if let Condition::ActionIs(a) = node.condition {
                if !actions.contains(a) {
                    return Err(Error::invalid(format!("node {i}: unknown action {}", a.0)));
                }
            }
            for term in &node.terms {
                if !term.weight.is_finite() {
                    return Err(Error::invalid(format!("node {i}: non-finite weight")));
                }
                match term.source {
                    TargetSource::ObservationBit(b) if b >= observation_width => {
                        return Err(Error::invalid(format!(
                            "node {i}: observation bit {b} out of range"
                        )))
                    }
                    TargetSource::NextPrediction(k) if k >= n => {
                        return Err(Error::invalid(format!(
                            "node {i}: prediction index out of range"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(QuestionNet {
            observation_width,
            actions,
            nodes,
        })
    }

    /// Node `k` predicts the special bit `k` steps ahead.
    pub fn chain(depth: usize, observation_width: usize, actions: ActionSet) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("chain depth must be at least 1"));
        }
        let nodes = (0..depth)
            .map(|k| NodeSpec {
                label: (k + 1).to_string(),
                terms: vec![if k == 0 {
                    TargetTerm::obs(SPECIAL_BIT, 1.0)
                } else {
                    TargetTerm::pred(k - 1, 1.0)
                }],
                condition: Condition::Always,
            })
            .collect();
        QuestionNet::new(observation_width, actions, nodes)
    }

    /// One node per nonempty action sequence of length at most `depth`,
    /// breadth-first with actions in declared order.
    ///
    /// The node for `(a1, ..., ak)` is gated on `a1` and targets the node
    /// for `(a2, ..., ak)`, or the special bit when `k == 1`.
    pub fn action_tree(depth: usize, observation_width: usize, actions: ActionSet) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("tree depth must be at least 1"));
        }
        let width = actions.len();
        let sequences = tree_sequences(width, depth);
        let nodes = sequences
            .iter()
            .enumerate()
            .map(|(i, seq)| {
                let label: String = seq.iter().map(|&a| actions.label(a)).collect();
                let target = if seq.len() == 1 {
                    TargetTerm::obs(SPECIAL_BIT, 1.0)
                } else {
                    TargetTerm::pred(suffix_index(i, seq.len(), width), 1.0)
                };
                NodeSpec {
                    label,
                    terms: vec![target],
                    condition: Condition::ActionIs(seq[0]),
                }
            })
            .collect();
        QuestionNet::new(observation_width, actions, nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeSpec {
        &self.nodes[i]
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn observation_width(&self) -> usize {
        self.observation_width
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// Labels of nodes whose targets are not guaranteed to stay in `[0, 1]`.
    pub fn non_probability_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| !n.has_probability_semantics())
            .map(|n| n.label.as_str())
            .collect()
    }

    /// `z_t` from `o_{t+1}` and the old-weight predictions `ỹ_{t+1}`.
    pub fn compute_targets(&self, o_next: &[f64], y_tilde_next: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.len()];
        self.compute_targets_into(o_next, y_tilde_next, &mut z)?;
        Ok(z)
    }

    pub fn compute_targets_into(&self, o_next: &[f64], y_tilde_next: &[f64], z: &mut [f64]) -> Result<()> {
        if o_next.len() != self.observation_width {
            return Err(Error::invalid(format!(
                "observation has width {}, network expects {}",
                o_next.len(),
                self.observation_width
            )));
        }
        if y_tilde_next.len() != self.len() || z.len() != self.len() {
            return Err(Error::invalid(format!(
                "prediction vector has length {}, network has {} nodes",
                y_tilde_next.len(),
                self.len()
            )));
        }
        for (zi, node) in z.iter_mut().zip(&self.nodes) {
            *zi = node
                .terms
                .iter()
                .map(|t| {
                    t.weight
                        * match t.source {
                            TargetSource::ObservationBit(b) => o_next[b],
                            TargetSource::NextPrediction(k) => y_tilde_next[k],
                        }
                })
                .sum();
        }
        Ok(())
    }

    pub fn compute_conditions(&self, a: Action) -> Result<Vec<f64>> {
        if !self.actions.contains(a) {
            return Err(Error::invalid(format!("unknown action {}", a.0)));
        }
        Ok(self.nodes.iter().map(|n| n.condition.value(a)).collect())
    }

    pub fn to_toml(&self) -> String {
        let doc = QnetDoc {
            observation_width: self.observation_width,
            actions: self.actions.labels().to_vec(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    label: n.label.clone(),
                    condition: match n.condition {
                        Condition::Always => "always".to_string(),
                        Condition::ActionIs(a) => format!("action:{}", self.actions.label(a)),
                    },
                    terms: n
                        .terms
                        .iter()
                        .map(|t| TermDoc {
                            source: match t.source {
                                TargetSource::ObservationBit(b) => format!("obs:{b}"),
                                TargetSource::NextPrediction(k) => {
                                    format!("pred:{}", self.nodes[k].label)
                                }
                            },
                            weight: t.weight,
                        })
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("question network serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: QnetDoc =
            toml::from_str(text).map_err(|e| Error::Parse(format!("malformed question network: {e}")))?;
        doc.into_net()
    }
}

impl fmt::Display for QuestionNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}

/// Every nonempty action sequence of length at most `depth`, shortest
/// first, lexicographic in action order within a length.
pub fn tree_sequences(width: usize, depth: usize) -> Vec<Vec<Action>> {
    let mut out = Vec::new();
    for len in 1..=depth {
        for mut code in 0..width.pow(len as u32) {
            let mut seq = vec![Action(0); len];
            for slot in seq.iter_mut().rev() {
                *slot = Action(code % width);
                code /= width;
            }
            out.push(seq);
        }
    }
    out
}

/// Position in [`tree_sequences`] order of the suffix (first action
/// dropped) of the sequence at position `index`, which has length `len`.
fn suffix_index(index: usize, len: usize, width: usize) -> usize {
    let level_start = |l: usize| (1..l).map(|d| width.pow(d as u32)).sum::<usize>();
    let code = index - level_start(len);
    level_start(len - 1) + code % width.pow(len as u32 - 1)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct QnetDoc {
    pub observation_width: usize,
    pub actions: Vec<String>,
    pub nodes: Vec<NodeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct NodeDoc {
    pub label: String,
    pub condition: String,
    pub terms: Vec<TermDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TermDoc {
    pub source: String,
    pub weight: f64,
}

impl QnetDoc {
    pub(crate) fn into_net(self) -> Result<QuestionNet> {
        let actions = ActionSet::new(self.actions.clone())
            .map_err(|e| Error::Parse(format!("actions: {e}")))?;
        let labels: Vec<&str> = self.nodes.iter().map(|n| n.label.as_str()).collect();
        let n = labels.len();
        let mut nodes = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            let condition = match node.condition.as_str() {
                "always" => Condition::Always,
                c => match c.strip_prefix("action:") {
                    Some(label) => Condition::ActionIs(actions.lookup(label).ok_or_else(|| {
                        Error::Parse(format!("node {i}: condition: unknown action label {label:?}"))
                    })?),
                    None => {
                        return Err(Error::Parse(format!(
                            "node {i}: condition: expected \"always\" or \"action:<label>\", got {c:?}"
                        )))
                    }
                },
            };
            let mut terms = Vec::with_capacity(node.terms.len());
            for term in &node.terms {
                let source = if let Some(bit) = term.source.strip_prefix("obs:") {
                    let bit: usize = bit.parse().map_err(|_| {
                        Error::Parse(format!("node {i}: source: bad observation bit {bit:?}"))
                    })?;
                    if bit >= self.observation_width {
                        return Err(Error::Parse(format!(
                            "node {i}: observation bit out of range"
                        )));
                    }
                    TargetSource::ObservationBit(bit)
                } else if let Some(r) = term.source.strip_prefix("pred:") {
                    let k = match labels.iter().position(|l| *l == r) {
                        Some(k) => k,
                        None => r.parse::<usize>().map_err(|_| {
                            Error::Parse(format!("node {i}: source: unknown node {r:?}"))
                        })?,
                    };
                    if k >= n {
                        return Err(Error::Parse(format!(
                            "node {i}: prediction index out of range"
                        )));
                    }
                    TargetSource::NextPrediction(k)
                } else {
                    return Err(Error::Parse(format!(
                        "node {i}: source: expected \"obs:<i>\" or \"pred:<node>\", got {:?}",
                        term.source
                    )));
                };
                terms.push(TargetTerm {
                    source,
                    weight: term.weight,
                });
            }
            nodes.push(NodeSpec {
                label: node.label.clone(),
                terms,
                condition,
            });
        }
        QuestionNet::new(self.observation_width, actions, nodes).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Parse(msg),
            other => other,
        })
    }
}
