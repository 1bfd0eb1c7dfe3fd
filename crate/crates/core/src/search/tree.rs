use serde::{Deserialize, Serialize};

use super::{SearchConfig, SearchError};
use crate::consistency::ConsistencyResult;
use crate::model::{answers_equal, AnswerLabel, Direction, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub state: Response,
    pub incoming_action: Option<Direction>,
    pub visits: u64,
    pub cumulative_reward: f64,
    pub inter_consistency: Option<ConsistencyResult>,
    pub depth: usize,
    /// Set when an expansion of this node produced no valid child.
    pub terminal: bool,
}

impl Node {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.cumulative_reward / self.visits as f64
        }
    }

    pub fn answer(&self) -> Option<AnswerLabel> {
        self.state.answer
    }
}

/// Arena-backed search tree. Node ids are insertion indices; the root is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<Node>,
    pub intra: ConsistencyResult,
    pub intra_samples: Vec<Response>,
}

pub const ROOT: usize = 0;

/// `R/N + 2 c_p sqrt(2 ln N_parent / N)`.
///
/// Panics if either node has no visits.
pub fn uct_score(child: &Node, parent: &Node, c_p: f64) -> f64 {
    assert!(child.visits > 0 && parent.visits > 0, "uct_score on an unvisited node");
    let n = child.visits as f64;
    child.cumulative_reward / n + 2.0 * c_p * (2.0 * (parent.visits as f64).ln() / n).sqrt()
}

/// `w_d * [answers differ] + w_c * share`.
pub fn reward(child: AnswerLabel, parent: AnswerLabel, share: f64, config: &SearchConfig) -> f64 {
    let diversity = if answers_equal(&child, &parent) { 0.0 } else { 1.0 };
    config.diversity_weight * diversity + config.consistency_weight * share
}

impl SearchTree {
    pub fn new(root_state: Response, intra: ConsistencyResult, intra_samples: Vec<Response>) -> Self {
        assert!(root_state.valid, "root state must be valid");
        let root = Node {
            id: ROOT,
            parent: None,
            children: Vec::new(),
            state: root_state,
            incoming_action: None,
            visits: 0,
            cumulative_reward: 0.0,
            inter_consistency: None,
            depth: 0,
            terminal: false,
        };
        SearchTree { nodes: vec![root], intra, intra_samples }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[ROOT]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn add_child(&mut self, parent: usize, state: Response, action: Direction) -> usize {
        assert!(state.valid, "invalid states never enter the tree");
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(Node {
            id,
            parent: Some(parent),
            children: Vec::new(),
            state,
            incoming_action: Some(action),
            visits: 0,
            cumulative_reward: 0.0,
            inter_consistency: None,
            depth,
            terminal: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn set_inter_consistency(&mut self, id: usize, result: ConsistencyResult) {
        self.nodes[id].inter_consistency = Some(result);
    }

    pub fn mark_terminal(&mut self, id: usize) {
        self.nodes[id].terminal = true;
    }

    /// Adds one visit and `r` to every node from `leaf` up to the root.
    pub fn backpropagate(&mut self, leaf: usize, r: f64) {
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.cumulative_reward += r;
            cur = node.parent;
        }
    }

    /// Child with the highest UCT score; ties go to the lowest id.
    pub fn best_child(&self, parent: usize, c_p: f64) -> Result<usize, SearchError> {
        let p = &self.nodes[parent];
        let mut best: Option<(usize, f64)> = None;
        for &c in &p.children {
            let s = uct_score(&self.nodes[c], p, c_p);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        best.map(|(c, _)| c).ok_or(SearchError::NoChildren(parent))
    }

    /// Reward of a node relative to its parent and expansion siblings; 0 at the root.
    pub fn node_reward(&self, id: usize, config: &SearchConfig) -> f64 {
        let node = &self.nodes[id];
        let Some(parent) = node.parent.map(|p| &self.nodes[p]) else {
            return 0.0;
        };
        let child_answer = node.state.answer.expect("tree states are valid");
        let parent_answer = parent.state.answer.expect("tree states are valid");
        let share = parent.inter_consistency.as_ref().map_or(0.0, |inter| inter.share(&child_answer));
        reward(child_answer, parent_answer, share, config)
    }

    /// Every answer held by a node, root first.
    pub fn answers(&self) -> impl Iterator<Item = AnswerLabel> + '_ {
        self.nodes.iter().filter_map(|n| n.state.answer)
    }
}
