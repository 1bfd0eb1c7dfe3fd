//! Monte-Carlo tree search over navigator directions and reasoner responses.
//!
//! One call to [`mirror_search`] answers one question:
//!
//! 1. draw `m` initial responses and accept their majority answer outright if
//!    its agreement reaches the threshold;
//! 2. otherwise root the tree at the majority response and iterate
//!    select / expand / simulate / backpropagate, stopping early when the
//!    children of one expansion agree at or above the threshold;
//! 3. return the top answer of the expansion with the highest agreement.

mod trace;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trace::{to_dot, ChildRecord, RolloutStep, SearchTrace, StopReason, TraceEvent, TraceFooter, TraceHeader};
pub use tree::{reward, uct_score, Node, SearchTree, ROOT};

use crate::agents::{verbalize_consistency, AgentError, Agents, NavigatorInput};
use crate::consistency::{
    aggregate_final, intra_consistency, tally_responses, AggregationInput, AggregationPolicy, ConsistencyError,
};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Question, Response};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("node {0} has no children")]
    NoChildren(usize),
    #[error("every response generated while expanding node {0} was invalid")]
    AllChildrenInvalid(usize),
    #[error("invalid search config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
}

impl SearchError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            SearchError::Agent(AgentError::Gateway(e))
            | SearchError::Consistency(ConsistencyError::Agent(AgentError::Gateway(e))) => Some(e),
            _ => None,
        }
    }

    pub fn is_transport(&self) -> bool {
        self.gateway_error().is_some_and(GatewayError::is_transport)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub exploration_constant: f64,
    pub consistency_threshold: f64,
    pub branching: usize,
    pub max_depth: usize,
    pub max_iterations: usize,
    pub intra_samples: usize,
    pub diversity_weight: f64,
    pub consistency_weight: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            exploration_constant: std::f64::consts::FRAC_1_SQRT_2,
            consistency_threshold: 0.8,
            branching: 5,
            max_depth: 3,
            max_iterations: 3,
            intra_samples: 5,
            diversity_weight: 0.5,
            consistency_weight: 0.5,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// Threshold used with smaller open models.
    pub fn small_model() -> Self {
        SearchConfig { consistency_threshold: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let fail = |field: &str, reason: &str| {
            Err(SearchError::InvalidConfig { field: field.to_string(), reason: reason.to_string() })
        };
        if !(self.exploration_constant > 0.0 && self.exploration_constant.is_finite()) {
            return fail("exploration_constant", "must be a positive number");
        }
        if !(0.0..=1.0).contains(&self.consistency_threshold) {
            return fail("consistency_threshold", "must lie in [0, 1]");
        }
        if self.branching == 0 {
            return fail("branching", "must be at least 1");
        }
        if self.intra_samples == 0 {
            return fail("intra_samples", "must be at least 1");
        }
        if self.diversity_weight.is_nan() || self.diversity_weight < 0.0 {
            return fail("diversity_weight", "must be >= 0");
        }
        if self.consistency_weight.is_nan() || self.consistency_weight < 0.0 {
            return fail("consistency_weight", "must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub answer: crate::model::AnswerLabel,
    pub stop_reason: StopReason,
    pub trace: SearchTrace,
    pub tree: SearchTree,
}

fn navigator_input<'a>(question: &'a Question, tree: &'a SearchTree, node: usize) -> NavigatorInput<'a> {
    let n = tree.node(node);
    NavigatorInput::reflect(
        question,
        &n.state,
        n.incoming_action.as_ref(),
        Some(verbalize_consistency(tree.intra.confidence)),
    )
}

/// Expands `node` with `branching` directions and their responses. Valid
/// responses become children and are backpropagated once with their reward.
/// When none survives the node is marked terminal.
pub fn expand<G: Gateway + ?Sized>(
    tree: &mut SearchTree,
    node: usize,
    question: &Question,
    config: &SearchConfig,
    agents: &Agents,
    gateway: &G,
    events: &mut Vec<TraceEvent>,
) -> Result<Vec<usize>, SearchError> {
    let depth = tree.node(node).depth;
    assert!(depth < config.max_depth, "expanding a node at the depth limit");
    let directions = agents.navigator_direct(
        &navigator_input(question, tree, node),
        config.branching,
        gateway,
        &format!("navigator/expand/depth{}", depth + 1),
    )?;
    let prev = tree.node(node).state.clone();
    let responses = agents.reasoner_reflect_batch(
        question,
        &directions,
        &prev,
        gateway,
        &format!("reasoner/expand/depth{}", depth + 1),
    )?;

    let (kept, discarded): (Vec<_>, Vec<_>) = directions.iter().cloned().zip(responses).partition(|(_, r)| r.valid);
    let discarded: Vec<Response> = discarded.into_iter().map(|(_, r)| r).collect();
    if kept.is_empty() {
        tree.mark_terminal(node);
        events.push(TraceEvent::ExpandFailed { node, directions, discarded });
        return Err(SearchError::AllChildrenInvalid(node));
    }

    let inter = tally_responses(&kept.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
    tree.set_inter_consistency(node, inter.clone());
    let mut children = Vec::with_capacity(kept.len());
    let mut records = Vec::with_capacity(kept.len());
    for (action, state) in kept {
        let id = tree.add_child(node, state.clone(), action.clone());
        records.push(ChildRecord { id, action, state });
        children.push(id);
    }
    events.push(TraceEvent::Expand { parent: node, directions, children: records, discarded, inter });
    for &c in &children {
        let r = tree.node_reward(c, config);
        tree.backpropagate(c, r);
        events.push(TraceEvent::Backpropagate { leaf: c, reward: r });
    }
    Ok(children)
}

/// Greedy rollout from `leaf`: at each step take the highest-reward response
/// among one batch of directions, until the depth limit or an agreeing batch.
/// Nothing is added to the tree.
pub fn simulate<G: Gateway + ?Sized>(
    tree: &SearchTree,
    leaf: usize,
    question: &Question,
    config: &SearchConfig,
    agents: &Agents,
    gateway: &G,
) -> Result<(f64, Vec<RolloutStep>), SearchError> {
    let start = tree.node(leaf);
    if start.depth >= config.max_depth {
        return Ok((tree.node_reward(leaf, config), Vec::new()));
    }
    let verbal = verbalize_consistency(tree.intra.confidence);
    let mut state = start.state.clone();
    let mut action = start.incoming_action.clone();
    let mut depth = start.depth;
    let mut steps = Vec::new();
    let mut r = 0.0;
    while depth < config.max_depth {
        let input = NavigatorInput::reflect(question, &state, action.as_ref(), Some(verbal.clone()));
        let directions = agents.navigator_direct(
            &input,
            config.branching,
            gateway,
            &format!("navigator/rollout/depth{}", depth + 1),
        )?;
        let responses = agents.reasoner_reflect_batch(
            question,
            &directions,
            &state,
            gateway,
            &format!("reasoner/rollout/depth{}", depth + 1),
        )?;
        let answers: Vec<_> = responses.iter().map(|r| r.valid.then_some(r.answer).flatten()).collect();
        let inter = match tally_responses(&responses) {
            Ok(inter) => inter,
            Err(ConsistencyError::NoValidResponses) => {
                steps.push(RolloutStep { depth: depth + 1, answers, chosen: None, reward: 0.0 });
                return Ok((0.0, steps));
            }
            Err(e) => return Err(e.into()),
        };
        let parent_answer = state.answer.expect("rollout states are valid");
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in answers.iter().enumerate() {
            if let Some(a) = a {
                let v = reward(*a, parent_answer, inter.share(a), config);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        let (i, v) = best.expect("a valid response exists");
        r = v;
        depth += 1;
        steps.push(RolloutStep { depth, answers, chosen: Some(i), reward: v });
        state = responses[i].clone();
        action = Some(directions[i].clone());
        if inter.confidence >= config.consistency_threshold {
            break;
        }
    }
    Ok((r, steps))
}

/// Runs the full search for one question.
pub fn mirror_search<G: Gateway + ?Sized>(
    question: &Question,
    config: &SearchConfig,
    agents: &Agents,
    gateway: &G,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    let (samples, intra) = intra_consistency(question, config.intra_samples, agents, gateway)?;
    let root_state = samples
        .iter()
        .find(|r| r.valid && r.answer == Some(intra.top_answer))
        .cloned()
        .expect("the top answer comes from a valid sample");
    let mut events = vec![
        TraceEvent::Intra { samples: samples.clone(), result: intra.clone() },
        TraceEvent::Root { state: root_state.clone() },
    ];
    let mut tree = SearchTree::new(root_state, intra.clone(), samples);
    let header = TraceHeader { question_id: question.id.clone(), config: config.clone() };

    let finish = |tree: SearchTree, mut events: Vec<TraceEvent>, answer, reason, iteration| {
        events.push(TraceEvent::Stop { reason, iteration });
        let trace = SearchTrace {
            header: header.clone(),
            events,
            footer: TraceFooter { final_answer: answer, stop_reason: reason },
        };
        Ok(SearchOutcome { answer, stop_reason: reason, trace, tree })
    };

    if intra.confidence >= config.consistency_threshold {
        return finish(tree, events, intra.top_answer, StopReason::IntraThreshold, 0);
    }

    for iteration in 0..config.max_iterations {
        let mut path = vec![ROOT];
        let mut node = ROOT;
        loop {
            let n = tree.node(node);
            if n.terminal || n.depth >= config.max_depth || n.children.is_empty() {
                break;
            }
            node = tree.best_child(node, config.exploration_constant)?;
            path.push(node);
        }
        events.push(TraceEvent::Select { iteration, path });

        let n = tree.node(node);
        if n.terminal || n.depth >= config.max_depth {
            let r = tree.node_reward(node, config);
            events.push(TraceEvent::Simulate { leaf: node, steps: Vec::new(), reward: r });
            tree.backpropagate(node, r);
            events.push(TraceEvent::Backpropagate { leaf: node, reward: r });
            continue;
        }

        let children = match expand(&mut tree, node, question, config, agents, gateway, &mut events) {
            Ok(children) => children,
            Err(SearchError::AllChildrenInvalid(ROOT)) => {
                events.push(TraceEvent::Warning {
                    message: "every response at the root was invalid; falling back to the intra-consistency answer"
                        .into(),
                });
                return finish(tree, events, intra.top_answer, StopReason::IterationBudget, iteration);
            }
            Err(SearchError::AllChildrenInvalid(_)) => continue,
            Err(e) => return Err(e),
        };

        let inter = tree.node(node).inter_consistency.as_ref().expect("expansion records agreement");
        if inter.confidence >= config.consistency_threshold {
            let answer = aggregate_final(AggregationInput::Tree(&tree), AggregationPolicy::RewardSearchTree)?;
            return finish(tree, events, answer, StopReason::InterThreshold, iteration);
        }

        let leaf = tree.best_child(node, config.exploration_constant)?;
        debug_assert!(children.contains(&leaf));
        let (r, steps) = simulate(&tree, leaf, question, config, agents, gateway)?;
        events.push(TraceEvent::Simulate { leaf, steps, reward: r });
        tree.backpropagate(leaf, r);
        events.push(TraceEvent::Backpropagate { leaf, reward: r });
    }

    let answer = aggregate_final(AggregationInput::Tree(&tree), AggregationPolicy::RewardSearchTree)?;
    finish(tree, events, answer, StopReason::IterationBudget, config.max_iterations)
}
