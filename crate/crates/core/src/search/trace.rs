use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::tree::{SearchTree, ROOT};
use super::{SearchConfig, SearchError};
use crate::consistency::ConsistencyResult;
use crate::model::{AnswerLabel, Direction, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    IntraThreshold,
    InterThreshold,
    IterationBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub id: usize,
    pub action: Direction,
    pub state: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub depth: usize,
    pub answers: Vec<Option<AnswerLabel>>,
    /// Index into `answers` of the state the rollout continued from.
    pub chosen: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Intra {
        samples: Vec<Response>,
        result: ConsistencyResult,
    },
    Root {
        state: Response,
    },
    Select {
        iteration: usize,
        path: Vec<usize>,
    },
    Expand {
        parent: usize,
        directions: Vec<Direction>,
        children: Vec<ChildRecord>,
        discarded: Vec<Response>,
        inter: ConsistencyResult,
    },
    ExpandFailed {
        node: usize,
        directions: Vec<Direction>,
        discarded: Vec<Response>,
    },
    Simulate {
        leaf: usize,
        steps: Vec<RolloutStep>,
        reward: f64,
    },
    Backpropagate {
        leaf: usize,
        reward: f64,
    },
    Stop {
        reason: StopReason,
        iteration: usize,
    },
    Warning {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub question_id: String,
    pub config: SearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub final_answer: AnswerLabel,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub footer: TraceFooter,
}

impl SearchTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        serde_json::from_str(text).map_err(|e| SearchError::MalformedTrace(e.to_string()))
    }

    pub fn expansions(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| matches!(e, TraceEvent::Expand { .. }))
    }

    /// Replays the event log into a tree.
    pub fn rebuild_tree(&self) -> Result<SearchTree, SearchError> {
        let bad = |m: &str| SearchError::MalformedTrace(m.to_string());
        let mut intra = None;
        let mut tree: Option<SearchTree> = None;
        for event in &self.events {
            match event {
                TraceEvent::Intra { samples, result } => intra = Some((samples.clone(), result.clone())),
                TraceEvent::Root { state } => {
                    let (samples, result) = intra.clone().ok_or_else(|| bad("root before intra event"))?;
                    tree = Some(SearchTree::new(state.clone(), result, samples));
                }
                TraceEvent::Expand { parent, children, inter, .. } => {
                    let t = tree.as_mut().ok_or_else(|| bad("expand before root"))?;
                    if *parent >= t.len() {
                        return Err(bad("expand of unknown node"));
                    }
                    t.set_inter_consistency(*parent, inter.clone());
                    for c in children {
                        let id = t.add_child(*parent, c.state.clone(), c.action.clone());
                        if id != c.id {
                            return Err(bad("child ids out of order"));
                        }
                    }
                }
                TraceEvent::ExpandFailed { node, .. } => {
                    let t = tree.as_mut().ok_or_else(|| bad("expand before root"))?;
                    if *node >= t.len() {
                        return Err(bad("failed expansion of unknown node"));
                    }
                    t.mark_terminal(*node);
                }
                TraceEvent::Backpropagate { leaf, reward } => {
                    let t = tree.as_mut().ok_or_else(|| bad("backpropagation before root"))?;
                    if *leaf >= t.len() {
                        return Err(bad("backpropagation from unknown node"));
                    }
                    t.backpropagate(*leaf, *reward);
                }
                TraceEvent::Select { .. }
                | TraceEvent::Simulate { .. }
                | TraceEvent::Stop { .. }
                | TraceEvent::Warning { .. } => {}
            }
        }
        tree.ok_or_else(|| bad("trace has no root event"))
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ")
}

/// Graphviz rendering: nodes read `id | answer | N | mean reward`, edges carry
/// the first 40 characters of the direction.
pub fn to_dot(tree: &SearchTree) -> String {
    let mut out = String::from("digraph search {\n  node [shape=box, fontname=\"monospace\"];\n");
    for n in tree.nodes() {
        let answer = n.answer().map_or_else(|| "-".to_string(), |a| a.to_string());
        let _ = writeln!(
            out,
            "  n{} [label=\"{} | {} | {} | {:.2}\"];",
            n.id,
            n.id,
            escape(&answer),
            n.visits,
            n.mean_reward()
        );
    }
    for n in tree.nodes().iter().filter(|n| n.id != ROOT) {
        let label: String = n.incoming_action.as_ref().map_or(String::new(), |d| d.text.chars().take(40).collect());
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", n.parent.unwrap(), n.id, escape(&label));
    }
    out.push_str("}\n");
    out
}
