//! Run-level metrics, the synthetic benchmark generator and the proportion
//! test used by the statistical checks.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::gateway::{PoolDirection, SyntheticWorld};
use crate::model::{AnswerLabel, Question, TaskKind};
use crate::search::{SearchTree, StopReason};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no results to evaluate")]
    EmptyRun,
    #[error("question {0} has no gold answer")]
    MissingGold(String),
    #[error("no question had an incorrect initial answer")]
    NoIncorrectInitials,
    #[error("direction set {0} has fewer than two directions")]
    TooFewDirections(usize),
    #[error("inputs have different lengths")]
    Misaligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub gold: Option<AnswerLabel>,
    pub initial_answer: AnswerLabel,
    pub final_answer: AnswerLabel,
    pub correct: Option<bool>,
    pub intra_confidence: f64,
    pub stop_reason: StopReason,
    pub tree_nodes: usize,
    pub tree_depth: usize,
    pub expansions: usize,
    pub ans_present: Option<bool>,
}

pub fn accuracy(results: &[QuestionResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut hits = 0usize;
    for r in results {
        let gold = r.gold.ok_or_else(|| EvalError::MissingGold(r.question_id.clone()))?;
        hits += (r.final_answer == gold) as usize;
    }
    Ok(hits as f64 / results.len() as f64)
}

/// Fraction of trees holding the gold answer at any node.
pub fn ans_presence<'a, I>(trees: I) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = (&'a SearchTree, AnswerLabel)>,
{
    let (mut n, mut present) = (0usize, 0usize);
    for (tree, gold) in trees {
        n += 1;
        present += tree.answers().any(|a| a == gold) as usize;
    }
    if n == 0 {
        return Err(EvalError::EmptyRun);
    }
    Ok(present as f64 / n as f64)
}

/// For each depth `2..=max_depth`, the fraction of trees reaching it.
pub fn depth_distribution<'a, I>(trees: I, max_depth: usize) -> BTreeMap<usize, f64>
where
    I: IntoIterator<Item = &'a SearchTree>,
{
    let depths: Vec<usize> = trees.into_iter().map(SearchTree::max_depth).collect();
    (2..=max_depth.max(2))
        .map(|d| {
            let frac = if depths.is_empty() {
                0.0
            } else {
                depths.iter().filter(|&&x| x >= d).count() as f64 / depths.len() as f64
            };
            (d, frac)
        })
        .collect()
}

/// Among questions answered incorrectly at first, the fractions whose final
/// answer changed and stayed the same.
pub fn changed_unchanged(
    initial: &[AnswerLabel],
    final_answers: &[AnswerLabel],
    golds: &[AnswerLabel],
) -> Result<(f64, f64), EvalError> {
    if initial.len() != final_answers.len() || initial.len() != golds.len() {
        return Err(EvalError::Misaligned);
    }
    let wrong: Vec<usize> = (0..initial.len()).filter(|&i| initial[i] != golds[i]).collect();
    if wrong.is_empty() {
        return Err(EvalError::NoIncorrectInitials);
    }
    let changed = wrong.iter().filter(|&&i| final_answers[i] != initial[i]).count() as f64 / wrong.len() as f64;
    Ok((changed, 1.0 - changed))
}

pub trait Similarity {
    /// Similarity in [0, 1].
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine over term-frequency vectors of lowercased whitespace tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermFrequencyCosine;

impl Similarity for TermFrequencyCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let tf = |s: &str| {
            let mut m: HashMap<String, f64> = HashMap::new();
            for tok in s.split_whitespace() {
                *m.entry(tok.to_lowercase()).or_insert(0.0) += 1.0;
            }
            m
        };
        let (ta, tb) = (tf(a), tf(b));
        let dot: f64 = ta.iter().map(|(k, v)| v * tb.get(k).copied().unwrap_or(0.0)).sum();
        let na = ta.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb = tb.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return if na == nb { 1.0 } else { 0.0 };
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Mean over sets of `1 - mean pairwise similarity`.
pub fn direction_diversity<S: AsRef<str>>(sets: &[Vec<S>], sim: &dyn Similarity) -> Result<f64, EvalError> {
    if sets.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut total = 0.0;
    for (i, set) in sets.iter().enumerate() {
        if set.len() < 2 {
            return Err(EvalError::TooFewDirections(i));
        }
        let (mut sum, mut pairs) = (0.0, 0usize);
        for a in 0..set.len() {
            for b in a + 1..set.len() {
                sum += sim.similarity(set[a].as_ref(), set[b].as_ref());
                pairs += 1;
            }
        }
        total += 1.0 - sum / pairs as f64;
    }
    Ok((total / sets.len() as f64).clamp(0.0, 1.0))
}

/// Parameters shared by every world of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub num_choices: usize,
    pub base_accuracy: f64,
    pub quality_gain: f64,
    pub pool_size: usize,
    /// Number of pool directions with quality `good_quality`; the rest have 0.
    pub good_directions: usize,
    pub good_quality: f64,
    pub refusal_rate: f64,
    pub direction_persistence: f64,
    pub distractor_share: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            num_choices: 4,
            base_accuracy: 0.6,
            quality_gain: 0.0,
            pool_size: 5,
            good_directions: 0,
            good_quality: 1.0,
            refusal_rate: 0.0,
            direction_persistence: 0.0,
            distractor_share: 0.0,
        }
    }
}

impl WorldParams {
    /// One hidden helpful direction among five (`p0 = 0.2`, `g = 0.5`). The
    /// navigator keeps proposing a direction it is shown, and a fifth of the
    /// wrong answers go to a fixed distractor.
    pub fn hidden_direction() -> Self {
        WorldParams {
            base_accuracy: 0.2,
            quality_gain: 0.5,
            good_directions: 1,
            direction_persistence: 1.0,
            distractor_share: 0.2,
            ..WorldParams::default()
        }
    }
}

/// `n` seeded four-choice questions with one scripted world each.
pub fn synth_benchmark(n: usize, params: &WorldParams, seed: u64) -> Vec<(Question, SyntheticWorld)> {
    assert!(n >= 1, "benchmark needs at least one question");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let choices: Vec<String> =
                (0..params.num_choices).map(|c| format!("option {} of item {i}", AnswerLabel::letter(c))).collect();
            let gold = AnswerLabel::Choice(rng.gen_range(0..params.num_choices));
            let question = Question::multiple_choice(
                format!("synth-{i:04}"),
                format!("Synthetic item {i} (seed {seed}): which option is correct?"),
                choices,
                Some(gold),
            )
            .expect("synthetic question is well formed");
            let mut pool: Vec<PoolDirection> = (0..params.pool_size)
                .map(|j| PoolDirection {
                    text: format!("Inspect angle {j} of item {i} before answering."),
                    quality: if j < params.good_directions { params.good_quality } else { 0.0 },
                })
                .collect();
            pool.shuffle(&mut rng);
            let wrong: Vec<usize> = (0..params.num_choices).filter(|&c| AnswerLabel::Choice(c) != gold).collect();
            let distractor = AnswerLabel::Choice(wrong[rng.gen_range(0..wrong.len())]);
            let world = SyntheticWorld {
                kind: TaskKind::MultipleChoice { num_choices: params.num_choices },
                true_answer: gold,
                base_accuracy: params.base_accuracy,
                direction_pool: pool,
                quality_gain: params.quality_gain,
                refusal_rate: params.refusal_rate,
                rng_seed: rng.gen(),
                direction_persistence: params.direction_persistence,
                distractor: Some(distractor),
                distractor_share: params.distractor_share,
            };
            (question, world)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

impl ZTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided pooled two-proportion z-test of `p1 > p2`.
pub fn two_proportion_z(hits1: usize, n1: usize, hits2: usize, n2: usize) -> ZTest {
    assert!(n1 > 0 && n2 > 0, "proportion test needs samples");
    let (p1, p2) = (hits1 as f64 / n1 as f64, hits2 as f64 / n2 as f64);
    let pooled = (hits1 + hits2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se == 0.0 { 0.0 } else { (p1 - p2) / se };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    ZTest { z, p_value: 1.0 - normal.cdf(z) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub questions: usize,
    pub failed: usize,
    pub accuracy: Option<f64>,
    pub ans_presence: Option<f64>,
    pub depth_histogram: BTreeMap<usize, f64>,
    pub changed_fraction: Option<f64>,
    pub unchanged_fraction: Option<f64>,
    pub direction_diversity: Option<f64>,
    pub stop_reasons: BTreeMap<String, usize>,
    pub per_question: Vec<QuestionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<C> {
    pub config: C,
    pub metrics: RunMetrics,
}

impl<C: Serialize> MetricsReport<C> {
    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

pub fn write_per_question_csv(rows: &[QuestionResult], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "question_id",
        "gold",
        "initial_answer",
        "final_answer",
        "correct",
        "intra_confidence",
        "stop_reason",
        "tree_nodes",
        "tree_depth",
        "expansions",
        "ans_present",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.question_id.clone(),
            opt(r.gold.map(|g| g.to_string())),
            r.initial_answer.to_string(),
            r.final_answer.to_string(),
            opt(r.correct.map(|c| c.to_string())),
            format!("{}", r.intra_confidence),
            format!("{:?}", r.stop_reason),
            r.tree_nodes.to_string(),
            r.tree_depth.to_string(),
            r.expansions.to_string(),
            opt(r.ans_present.map(|c| c.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn result(final_answer: usize, gold: usize) -> QuestionResult {
        QuestionResult {
            question_id: "q".into(),
            gold: Some(AnswerLabel::Choice(gold)),
            initial_answer: AnswerLabel::Choice(final_answer),
            final_answer: AnswerLabel::Choice(final_answer),
            correct: Some(final_answer == gold),
            intra_confidence: 1.0,
            stop_reason: StopReason::IntraThreshold,
            tree_nodes: 1,
            tree_depth: 0,
            expansions: 0,
            ans_present: Some(final_answer == gold),
        }
    }

    #[test]
    fn accuracy_examples() {
        let rs = vec![result(0, 0), result(1, 1), result(2, 2), result(3, 0)];
        assert_eq!(accuracy(&rs).unwrap(), 0.75);
        assert_eq!(accuracy(&[]), Err(EvalError::EmptyRun));
    }

    #[test]
    fn changed_examples() {
        let c = |s: &str| s.chars().map(|x| AnswerLabel::from_letter(x).unwrap()).collect::<Vec<_>>();
        assert_eq!(changed_unchanged(&c("AB"), &c("BB"), &c("BB")).unwrap(), (1.0, 0.0));
        assert_eq!(changed_unchanged(&c("AB"), &c("AB"), &c("AB")), Err(EvalError::NoIncorrectInitials));
        assert_eq!(changed_unchanged(&c("AC"), &c("AC"), &c("BB")).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn diversity_extremes() {
        let sim = TermFrequencyCosine;
        assert_eq!(direction_diversity(&[vec!["check the units", "check the units"]], &sim).unwrap(), 0.0);
        assert_eq!(direction_diversity(&[vec!["alpha beta", "gamma delta"]], &sim).unwrap(), 1.0);
        assert_eq!(direction_diversity(&[vec!["alone"]], &sim), Err(EvalError::TooFewDirections(0)));
    }

    #[test]
    fn z_test_direction() {
        let t = two_proportion_z(70, 100, 50, 100);
        assert!(t.z > 2.8 && t.significant(0.05));
        let t = two_proportion_z(50, 100, 70, 100);
        assert!(t.z < 0.0 && !t.significant(0.05));
        assert_eq!(two_proportion_z(10, 10, 10, 10).z, 0.0);
    }

    #[test]
    fn benchmark_is_reproducible() {
        let p = WorldParams::hidden_direction();
        assert_eq!(synth_benchmark(200, &p, 1), synth_benchmark(200, &p, 1));
        assert_ne!(synth_benchmark(5, &p, 1), synth_benchmark(5, &p, 2));
        let b = synth_benchmark(50, &p, 3);
        for (q, w) in &b {
            assert_eq!(q.gold, Some(w.true_answer));
            assert_eq!(w.direction_pool.iter().filter(|d| d.quality == 1.0).count(), 1);
            assert_ne!(w.distractor, q.gold);
        }
    }

    proptest! {
        #[test]
        fn diversity_in_unit_interval(sets in prop::collection::vec(prop::collection::vec("[a-c ]{0,12}", 2..5), 1..6)) {
            let d = direction_diversity(&sets, &TermFrequencyCosine).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
