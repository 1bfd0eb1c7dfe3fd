//! Offline statistical checks against the synthetic backend.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::Agents;
use crate::consistency::{aggregate_final, intra_consistency, tally_responses, AggregationInput, AggregationPolicy};
use crate::evaluation::{synth_benchmark, two_proportion_z, WorldParams};
use crate::gateway::{PoolDirection, SyntheticGateway, SyntheticWorld};
use crate::model::{validate_response, AnswerLabel, Direction, DirectionSource, Question, Response};
use crate::search::{mirror_search, uct_score, SearchConfig, SearchOutcome, SearchTree, ROOT};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCheck {
    pub name: String,
    pub passed: bool,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub world: WorldParams,
    pub search: SearchConfig,
    pub checks: Vec<BenchCheck>,
    pub elapsed_secs: f64,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub seed: u64,
    pub questions: usize,
    pub world: WorldParams,
}

impl BenchOptions {
    pub fn new(seed: u64) -> Self {
        BenchOptions { seed, questions: 200, world: WorldParams::hidden_direction() }
    }
}

/// Search settings for the policy-ordering benchmark: every expansion must
/// agree unanimously before the search stops early, with a budget of twelve
/// iterations.
pub fn ordering_config(seed: u64) -> SearchConfig {
    SearchConfig { consistency_threshold: 1.0, max_iterations: 12, seed, ..SearchConfig::default() }
}

/// Per-policy hit counts over one benchmark run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    pub questions: usize,
    pub self_consistency: usize,
    pub majority_tree: usize,
    pub reward_search: usize,
    pub ans_present: usize,
}

impl PolicyScores {
    pub fn rate(&self, hits: usize) -> f64 {
        hits as f64 / self.questions as f64
    }
}

/// Searches every question and scores the three policies on the same trees.
pub fn run_benchmark(
    bench: &[(Question, SyntheticWorld)],
    config: &SearchConfig,
) -> (PolicyScores, Vec<SearchOutcome>) {
    let gateway = SyntheticGateway::from_benchmark(bench);
    let agents = Agents::default();
    let outcomes: Vec<SearchOutcome> = bench
        .par_iter()
        .map(|(q, _)| mirror_search(q, config, &agents, &gateway).expect("synthetic search succeeds"))
        .collect();
    let mut s = PolicyScores { questions: bench.len(), ..PolicyScores::default() };
    for ((q, _), o) in bench.iter().zip(&outcomes) {
        let gold = q.gold.expect("synthetic questions carry gold");
        let tree = AggregationInput::Tree(&o.tree);
        let sc = aggregate_final(tree, AggregationPolicy::SelfConsistency { k: 5 }).expect("valid samples");
        let maj =
            aggregate_final(AggregationInput::Tree(&o.tree), AggregationPolicy::MajorityTree).expect("valid tree");
        s.self_consistency += (sc == gold) as usize;
        s.majority_tree += (maj == gold) as usize;
        s.reward_search += (o.answer == gold) as usize;
        s.ans_present += o.tree.answers().any(|a| a == gold) as usize;
    }
    (s, outcomes)
}

fn check(name: &str, passed: bool, observed: String) -> BenchCheck {
    BenchCheck { name: name.to_string(), passed, observed }
}

fn uct_hand_value() -> BenchCheck {
    let (child, parent) = stub_pair(2, 1.0, 8);
    let s = uct_score(&child, &parent, 1.0);
    check("uct_hand_value", (s - 3.3841).abs() < 1e-4, format!("score {s:.6}, expected 3.3841"))
}

fn stub_pair(child_visits: u64, child_reward: f64, parent_visits: u64) -> (crate::search::Node, crate::search::Node) {
    let mc = crate::model::TaskKind::MultipleChoice { num_choices: 4 };
    let r = validate_response("Finish[A]", mc);
    let intra = tally_responses(std::slice::from_ref(&r)).expect("valid");
    let mut t = SearchTree::new(r.clone(), intra, vec![r.clone()]);
    let c = t.add_child(ROOT, r, Direction { text: "d".into(), source: DirectionSource::Generative });
    for _ in 0..child_visits {
        t.backpropagate(c, child_reward / child_visits as f64);
    }
    let mut parent = t.root().clone();
    parent.visits = parent_visits;
    (t.node(c).clone(), parent)
}

fn node_reward_example() -> BenchCheck {
    let mc = crate::model::TaskKind::MultipleChoice { num_choices: 4 };
    let resp = |l: &str| validate_response(&format!("Finish[{l}]"), mc);
    let siblings: Vec<Response> = "CCABC".chars().map(|c| resp(&c.to_string())).collect();
    let parent = resp("B");
    let intra = tally_responses(std::slice::from_ref(&parent)).expect("valid");
    let mut t = SearchTree::new(parent.clone(), intra, vec![parent]);
    t.set_inter_consistency(ROOT, tally_responses(&siblings).expect("valid"));
    let ids: Vec<usize> = siblings
        .iter()
        .map(|s| t.add_child(ROOT, s.clone(), Direction { text: "d".into(), source: DirectionSource::Generative }))
        .collect();
    let r = t.node_reward(ids[0], &SearchConfig::default());
    check("node_reward_example", (r - 0.8).abs() < 1e-12, format!("reward {r}, expected 0.8"))
}

/// best_child against an explicit argmax on random trees.
fn uct_bruteforce(seed: u64) -> BenchCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (tree, c_p) = random_tree(&mut rng);
        let parent = tree.root();
        let mut best = parent.children[0];
        let mut best_score = f64::NEG_INFINITY;
        for &c in &parent.children {
            let n = tree.node(c);
            let s = n.cumulative_reward / n.visits as f64
                + 2.0 * c_p * (2.0 * (parent.visits as f64).ln() / n.visits as f64).sqrt();
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        if tree.best_child(ROOT, c_p).expect("children exist") != best {
            mismatches += 1;
        }
    }
    check("uct_bruteforce_1000", mismatches == 0, format!("{mismatches} mismatches over 1000 trees"))
}

/// A root with 1..=8 children carrying random visit counts and rewards.
pub fn random_tree<R: Rng>(rng: &mut R) -> (SearchTree, f64) {
    let mc = crate::model::TaskKind::MultipleChoice { num_choices: 4 };
    let r = validate_response("Finish[A]", mc);
    let intra = tally_responses(std::slice::from_ref(&r)).expect("valid");
    let mut tree = SearchTree::new(r.clone(), intra, vec![r.clone()]);
    let k = rng.gen_range(1..=8);
    for i in 0..k {
        let c =
            tree.add_child(ROOT, r.clone(), Direction { text: format!("d{i}"), source: DirectionSource::Generative });
        for _ in 0..rng.gen_range(1..=12) {
            let reward = if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..1.0) };
            tree.backpropagate(c, reward);
        }
    }
    let c_p = [0.0, std::f64::consts::FRAC_1_SQRT_2, 1.0, rng.gen_range(0.0..2.0)][rng.gen_range(0..4)];
    (tree, c_p)
}

fn direction_lift(seed: u64) -> BenchCheck {
    let q = Question::multiple_choice(
        "lift",
        "Which option does the helpful direction point to?",
        (0..4).map(|i| format!("choice {i}")).collect(),
        Some(AnswerLabel::Choice(2)),
    )
    .expect("valid question");
    let mut world = SyntheticWorld::new(q.kind, AnswerLabel::Choice(2), 0.5, seed);
    world.quality_gain = 0.4;
    world.direction_pool = vec![PoolDirection { text: "Follow the helpful clue.".into(), quality: 1.0 }];
    let gateway = SyntheticGateway::new([(q.prompt_text.clone(), world)]);
    let agents = Agents::default();
    let good = Direction { text: "Follow the helpful clue.".into(), source: DirectionSource::Generative };
    let prev = validate_response("Thought: unsure.\nFinish[A]", q.kind);
    let mut hits = 0;
    for _ in 0..1000 {
        let r = agents
            .reasoner_respond(&q, Some(&good), Some(&prev), &gateway, "reasoner/reflect")
            .expect("synthetic call");
        hits += (r.answer == q.gold) as usize;
    }
    let f = hits as f64 / 1000.0;
    check(
        "direction_lift_p0.5_g0.4",
        (f - 0.9).abs() <= 0.03,
        format!("correct frequency {f:.3}, expected 0.9 +/- 0.03"),
    )
}

fn intra_gold_share(seed: u64) -> BenchCheck {
    let params = WorldParams { base_accuracy: 0.5, ..WorldParams::default() };
    let bench = synth_benchmark(1000, &params, seed ^ 0x5eed_0002);
    let gateway = SyntheticGateway::from_benchmark(&bench);
    let agents = Agents::default();
    let shares: Vec<f64> = bench
        .par_iter()
        .map(|(q, _)| {
            let (_, r) = intra_consistency(q, 5, &agents, &gateway).expect("no refusals");
            r.share(&q.gold.expect("gold"))
        })
        .collect();
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    check(
        "intra_gold_share_p0.5",
        (mean - 0.5).abs() <= 0.03,
        format!("mean gold share {mean:.4}, expected 0.5 +/- 0.03"),
    )
}

fn significant(name: &str, hits1: usize, hits2: usize, n: usize, l1: &str, l2: &str) -> BenchCheck {
    let t = two_proportion_z(hits1, n, hits2, n);
    check(
        name,
        hits1 > hits2 && t.significant(ALPHA),
        format!(
            "{l1} {:.3} vs {l2} {:.3}, z {:.2}, p {:.4}",
            hits1 as f64 / n as f64,
            hits2 as f64 / n as f64,
            t.z,
            t.p_value
        ),
    )
}

/// Runs every statistical check.
pub fn bench(options: &BenchOptions) -> BenchReport {
    let start = Instant::now();
    let seed = options.seed;
    let search = ordering_config(seed);
    let mut checks = vec![
        uct_hand_value(),
        node_reward_example(),
        uct_bruteforce(seed),
        direction_lift(seed),
        intra_gold_share(seed),
    ];

    let bench = synth_benchmark(options.questions, &options.world, seed);
    let mut presence = Vec::new();
    let mut at_k5 = None;
    for k in [1usize, 3, 5] {
        let (scores, _) = run_benchmark(&bench, &SearchConfig { branching: k, ..search.clone() });
        presence.push(scores.ans_present);
        if k == 5 {
            at_k5 = Some(scores);
        }
    }
    let s = at_k5.expect("K = 5 ran");
    let n = s.questions;
    checks.push(significant(
        "reward_search_over_majority_tree",
        s.reward_search,
        s.majority_tree,
        n,
        "reward_search",
        "majority_tree",
    ));
    checks.push(significant(
        "majority_tree_over_self_consistency5",
        s.majority_tree,
        s.self_consistency,
        n,
        "majority_tree",
        "self_consistency5",
    ));
    checks.push(significant(
        "reward_search_over_self_consistency5",
        s.reward_search,
        s.self_consistency,
        n,
        "reward_search",
        "self_consistency5",
    ));

    let rates: Vec<f64> = presence.iter().map(|&p| p as f64 / n as f64).collect();
    let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
    let gap = rates[2] - rates[0];
    let t = two_proportion_z(presence[2], n, presence[0], n);
    checks.push(check(
        "ans_presence_trend_k1_k3_k5",
        monotone && gap >= 0.10 && t.significant(ALPHA),
        format!(
            "ans_presence {:.3} / {:.3} / {:.3}, gap {gap:.3}, z {:.2}, p {:.4}",
            rates[0], rates[1], rates[2], t.z, t.p_value
        ),
    ));

    BenchReport { seed, world: options.world.clone(), search, checks, elapsed_secs: start.elapsed().as_secs_f64() }
}
