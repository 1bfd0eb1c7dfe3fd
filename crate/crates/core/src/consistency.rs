//! Answer agreement: intra-consistency over repeated initial samples,
//! inter-consistency over the siblings of one expansion, and the final-answer
//! aggregation policies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Agents};
use crate::gateway::Gateway;
use crate::model::{AnswerLabel, Question, Response};
use crate::search::SearchTree;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("no valid responses to tally")]
    NoValidResponses,
    #[error("responses mix answer labels of different task kinds")]
    MixedKinds,
    #[error("search tree has no nodes")]
    EmptyTree,
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub top_answer: AnswerLabel,
    pub confidence: f64,
    pub tally: BTreeMap<AnswerLabel, usize>,
    pub sample_size: usize,
}

impl ConsistencyResult {
    /// Fraction of the tallied answers equal to `answer`.
    pub fn share(&self, answer: &AnswerLabel) -> f64 {
        self.tally.get(answer).copied().unwrap_or(0) as f64 / self.sample_size as f64
    }
}

/// Tallies answers in order. The most frequent label wins; ties go to the
/// label that occurred first.
pub fn tally_answers<I>(answers: I) -> Result<ConsistencyResult, ConsistencyError>
where
    I: IntoIterator<Item = AnswerLabel>,
{
    let mut tally: BTreeMap<AnswerLabel, usize> = BTreeMap::new();
    let mut order: Vec<AnswerLabel> = Vec::new();
    for a in answers {
        if let Some(first) = order.first() {
            if !first.same_kind(&a) {
                return Err(ConsistencyError::MixedKinds);
            }
        }
        let count = tally.entry(a).or_insert(0);
        if *count == 0 {
            order.push(a);
        }
        *count += 1;
    }
    let sample_size: usize = tally.values().sum();
    let mut top = *order.first().ok_or(ConsistencyError::NoValidResponses)?;
    for a in &order[1..] {
        if tally[a] > tally[&top] {
            top = *a;
        }
    }
    Ok(ConsistencyResult { top_answer: top, confidence: tally[&top] as f64 / sample_size as f64, tally, sample_size })
}

/// Tally over the valid responses only.
pub fn tally_responses(responses: &[Response]) -> Result<ConsistencyResult, ConsistencyError> {
    tally_answers(responses.iter().filter(|r| r.valid).filter_map(|r| r.answer))
}

pub fn inter_consistency(siblings: &[Response]) -> Result<ConsistencyResult, ConsistencyError> {
    tally_responses(siblings)
}

/// Draws `m` initial responses and tallies them.
pub fn intra_consistency<G: Gateway + ?Sized>(
    question: &Question,
    m: usize,
    agents: &Agents,
    gateway: &G,
) -> Result<(Vec<Response>, ConsistencyResult), ConsistencyError> {
    assert!(m >= 1, "intra-consistency needs at least one sample");
    let samples = agents.reasoner_samples(question, m, gateway, "reasoner/intra")?;
    let result = tally_responses(&samples)?;
    Ok((samples, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum AggregationPolicy {
    SelfConsistency {
        k: usize,
    },
    MajorityTree,
    #[default]
    RewardSearchTree,
}

impl std::fmt::Display for AggregationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationPolicy::SelfConsistency { k } => write!(f, "self_consistency({k})"),
            AggregationPolicy::MajorityTree => f.write_str("majority_tree"),
            AggregationPolicy::RewardSearchTree => f.write_str("reward_search_tree"),
        }
    }
}

pub enum AggregationInput<'a> {
    Samples(&'a [Response]),
    Tree(&'a SearchTree),
}

/// Picks the final answer under `policy`.
///
/// On a tree, `SelfConsistency(k)` votes over the first `k` intra samples.
pub fn aggregate_final(input: AggregationInput, policy: AggregationPolicy) -> Result<AnswerLabel, ConsistencyError> {
    match (input, policy) {
        (AggregationInput::Samples(samples), AggregationPolicy::SelfConsistency { k }) => {
            assert!(k >= 1, "self-consistency needs k >= 1");
            Ok(tally_responses(&samples[..k.min(samples.len())])?.top_answer)
        }
        (AggregationInput::Samples(samples), _) => Ok(tally_responses(samples)?.top_answer),
        (AggregationInput::Tree(tree), AggregationPolicy::SelfConsistency { k }) => {
            aggregate_final(AggregationInput::Samples(&tree.intra_samples), AggregationPolicy::SelfConsistency { k })
        }
        (AggregationInput::Tree(tree), AggregationPolicy::MajorityTree) => {
            if tree.is_empty() {
                return Err(ConsistencyError::EmptyTree);
            }
            Ok(tally_responses(&tree.nodes().iter().map(|n| n.state.clone()).collect::<Vec<_>>())?.top_answer)
        }
        (AggregationInput::Tree(tree), AggregationPolicy::RewardSearchTree) => {
            if tree.is_empty() {
                return Err(ConsistencyError::EmptyTree);
            }
            let mut best: Option<&ConsistencyResult> = None;
            for inter in tree.nodes().iter().filter_map(|n| n.inter_consistency.as_ref()) {
                if best.is_none_or(|b| inter.confidence > b.confidence) {
                    best = Some(inter);
                }
            }
            Ok(best.unwrap_or(&tree.intra).top_answer)
        }
    }
}
