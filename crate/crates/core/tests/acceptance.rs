//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use mirror_core::agents::Agents;
use mirror_core::consistency::{aggregate_final, tally_responses, AggregationInput, AggregationPolicy};
use mirror_core::datasets::{load_fever_jsonl_lenient, load_mmlu_csv_lenient, DatasetError};
use mirror_core::evaluation::two_proportion_z;
use mirror_core::evaluation::{direction_diversity, synth_benchmark, TermFrequencyCosine, WorldParams};
use mirror_core::gateway::{MeteredGateway, SyntheticGateway};
use mirror_core::model::{validate_response, Direction, DirectionSource, FeverLabel, TaskKind};
use mirror_core::runner::{self, ordering_config, random_tree, run_benchmark, ALPHA};
use mirror_core::search::{mirror_search, uct_score, SearchConfig, SearchTree, TraceEvent, ROOT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const MC4: TaskKind = TaskKind::MultipleChoice { num_choices: 4 };

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn response(letter: char) -> mirror_core::model::Response {
    validate_response(&format!("Thought: pick.\nFinish[{letter}]"), MC4)
}

fn direction(i: usize) -> Direction {
    Direction { text: format!("direction {i}"), source: DirectionSource::Generative }
}

fn root_tree(letter: char) -> SearchTree {
    let r = response(letter);
    let intra = tally_responses(std::slice::from_ref(&r)).unwrap();
    SearchTree::new(r.clone(), intra, vec![r])
}

fn uct_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (tree, c_p) = random_tree(&mut rng);
        let parent = tree.root();
        let brute = parent
            .children
            .iter()
            .copied()
            .fold((usize::MAX, f64::NEG_INFINITY), |(bi, bs), c| {
                let n = tree.node(c);
                let s = n.cumulative_reward / n.visits as f64
                    + 2.0 * c_p * (2.0 * (parent.visits as f64).ln() / n.visits as f64).sqrt();
                if s > bs {
                    (c, s)
                } else {
                    (bi, bs)
                }
            })
            .0;
        let chosen = tree.best_child(ROOT, c_p).unwrap();
        if chosen != brute || uct_score(tree.node(chosen), parent, c_p).is_nan() {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} of 1000 random trees disagree with brute force"))
}

fn backprop_conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let mut violations = 0;
    for _ in 0..500 {
        let mut tree = root_tree('A');
        for i in 0..rng.gen_range(1..30) {
            let parent = rng.gen_range(0..tree.len());
            tree.add_child(parent, response('B'), direction(i));
        }
        let mut expected_visits = vec![0u64; tree.len()];
        let mut expected_reward = vec![0.0f64; tree.len()];
        let n = rng.gen_range(1..60);
        for _ in 0..n {
            let leaf = rng.gen_range(0..tree.len());
            let r: f64 = rng.gen_range(-1.0..2.0);
            tree.backpropagate(leaf, r);
            let mut cur = Some(leaf);
            while let Some(id) = cur {
                expected_visits[id] += 1;
                expected_reward[id] += r;
                cur = tree.node(id).parent;
            }
        }
        let ok = tree.root().visits == n
            && tree.nodes().iter().all(|node| {
                node.visits == expected_visits[node.id]
                    && (node.cumulative_reward - expected_reward[node.id]).abs() <= 1e-9
            });
        violations += (!ok) as usize;
    }
    ensure(violations == 0, format!("{violations} of 500 random sequences violate conservation"))
}

fn early_accept() -> Verdict {
    let params = WorldParams { base_accuracy: 1.0, ..WorldParams::default() };
    let bench = synth_benchmark(200, &params, SEED);
    let gateway = MeteredGateway::new(SyntheticGateway::from_benchmark(&bench));
    let agents = Agents::default();
    let config = SearchConfig { seed: SEED, ..SearchConfig::default() };
    let mut off = 0;
    for (q, _) in &bench {
        gateway.reset();
        mirror_search(q, &config, &agents, &gateway).unwrap();
        if gateway.calls("reasoner") != config.intra_samples || gateway.calls("navigator") != 0 {
            off += 1;
        }
    }
    ensure(off == 0, format!("{off} of 200 questions made other than 5 reasoner and 0 navigator calls"))
}

fn aggregation_bridge() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let mut mismatches = 0;
    let letter = |rng: &mut ChaCha8Rng| (b'A' + rng.gen_range(0..4u8)) as char;
    for _ in 0..500 {
        let mut tree = root_tree(letter(&mut rng));
        let k = rng.gen_range(1..=5);
        for i in 0..k {
            tree.add_child(ROOT, response(letter(&mut rng)), direction(i));
        }
        let states: Vec<_> = tree.nodes().iter().map(|n| n.state.clone()).collect();
        let tree_answer = aggregate_final(AggregationInput::Tree(&tree), AggregationPolicy::MajorityTree).unwrap();
        let sc =
            aggregate_final(AggregationInput::Samples(&states), AggregationPolicy::SelfConsistency { k: states.len() })
                .unwrap();
        mismatches += (tree_answer != sc) as usize;
    }
    ensure(mismatches == 0, format!("{mismatches} of 500 depth-1 trees disagree"))
}

fn ordering_and_presence() -> (Verdict, Verdict) {
    let start = Instant::now();
    let bench = synth_benchmark(200, &WorldParams::hidden_direction(), SEED);
    let config = ordering_config(SEED);
    let mut presence = BTreeMap::new();
    let mut k5 = None;
    for k in [1usize, 3, 5] {
        let (s, _) = run_benchmark(&bench, &SearchConfig { branching: k, ..config.clone() });
        presence.insert(k, s.ans_present);
        if k == 5 {
            k5 = Some(s);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let s = k5.unwrap();
    let n = s.questions;
    let rs_maj = two_proportion_z(s.reward_search, n, s.majority_tree, n);
    let maj_sc = two_proportion_z(s.majority_tree, n, s.self_consistency, n);
    let holds = s.reward_search > s.majority_tree
        && s.majority_tree > s.self_consistency
        && rs_maj.significant(ALPHA)
        && maj_sc.significant(ALPHA)
        && elapsed < 120.0;
    let ordering = ensure(
        holds,
        format!(
            "reward_search {:.3} > majority_tree {:.3} (p {:.4}) > self_consistency5 {:.3} (p {:.4}); {elapsed:.1}s",
            s.rate(s.reward_search),
            s.rate(s.majority_tree),
            rs_maj.p_value,
            s.rate(s.self_consistency),
            maj_sc.p_value
        ),
    );

    let rate = |k: usize| presence[&k] as f64 / n as f64;
    let t = two_proportion_z(presence[&5], n, presence[&1], n);
    let trend = ensure(
        rate(1) <= rate(3) && rate(3) <= rate(5) && rate(5) - rate(1) >= 0.10 && t.significant(ALPHA),
        format!("ans_presence K=1 {:.3}, K=3 {:.3}, K=5 {:.3}; p {:.4}", rate(1), rate(3), rate(5), t.p_value),
    );
    (ordering, trend)
}

fn depth_bound() -> Verdict {
    let bench = synth_benchmark(200, &WorldParams::hidden_direction(), SEED);
    let config = SearchConfig { seed: SEED, ..SearchConfig::default() };
    let (_, outcomes) = run_benchmark(&bench, &config);
    let depth = outcomes.iter().map(|o| o.tree.max_depth()).max().unwrap_or(0);
    let branching = outcomes.iter().map(|o| o.tree.max_branching()).max().unwrap_or(0);
    ensure(depth <= 3 && branching <= 5, format!("max depth {depth}, max branching {branching} over 200 trees"))
}

fn validity_filter() -> Verdict {
    let params = WorldParams { refusal_rate: 0.3, ..WorldParams::hidden_direction() };
    let bench = synth_benchmark(200, &params, SEED);
    let gateway = SyntheticGateway::from_benchmark(&bench);
    let agents = Agents::default();
    let config = SearchConfig { seed: SEED, ..SearchConfig::default() };
    let (mut searched, mut unanswerable, mut invalid_nodes, mut bad_denominators, mut discarded) = (0, 0, 0, 0, 0);
    for (q, _) in &bench {
        let o = match mirror_search(q, &config, &agents, &gateway) {
            Ok(o) => o,
            Err(_) => {
                unanswerable += 1;
                continue;
            }
        };
        searched += 1;
        invalid_nodes += o.tree.nodes().iter().filter(|n| !n.state.valid || n.state.answer.is_none()).count();
        let valid_intra = o.tree.intra_samples.iter().filter(|r| r.valid).count();
        bad_denominators += (o.tree.intra.sample_size != valid_intra) as usize;
        for e in &o.trace.events {
            if let TraceEvent::Expand { children, discarded: d, inter, .. } = e {
                discarded += d.len();
                let tally: usize = inter.tally.values().sum();
                bad_denominators += (inter.sample_size != children.len() || tally != children.len()) as usize;
            }
        }
    }
    ensure(
        invalid_nodes == 0 && bad_denominators == 0 && searched > 0,
        format!(
            "{searched} searched, {unanswerable} with no valid initial sample, {discarded} refusals discarded, \
             {invalid_nodes} invalid nodes, {bad_denominators} bad denominators"
        ),
    )
}

const RUN_CONFIG: &str = r#"
output_dir = "unused"

[dataset]
kind = "synthetic"
questions = 20

[dataset.world]
base_accuracy = 0.5
quality_gain = 0.4
good_directions = 1
direction_persistence = 0.5
refusal_rate = 0.05

[gateway]
backend = "synthetic"

[search]
seed = 7
"#;

fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut rels = vec!["metrics.json".to_string()];
    let mut names: Vec<_> = fs::read_dir(a.join("traces")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    rels.extend(names.into_iter().map(|n| format!("traces/{}", n.to_string_lossy())));
    rels.into_iter().filter(|r| fs::read(a.join(r)).ok() != fs::read(b.join(r)).ok()).collect()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut config = runner::RunConfig::from_toml(RUN_CONFIG).unwrap();
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        config.output_dir = dir.path().join(name);
        runner::run(&config, 4).unwrap();
        outputs.push(config.output_dir.clone());
    }
    let traces = fs::read_dir(outputs[0].join("traces")).unwrap().count();
    let diff = differing_files(&outputs[0], &outputs[1]);

    config.output_dir = dir.path().join("recorded");
    config.gateway.store_path = Some(dir.path().join("store.jsonl"));
    runner::run(&config, 4).unwrap();
    let replay = runner::replay_verify(&config, &dir.path().join("replayed"), 4).unwrap();
    ensure(
        traces == 20 && diff.is_empty() && replay.identical() && replay.compared == 21,
        format!(
            "{traces} traces; {} files differ between seeded runs; replay compared {}, mismatched {:?}, missing {:?}",
            diff.len(),
            replay.compared,
            replay.mismatched,
            replay.missing
        ),
    )
}

fn parsing_conformance() -> Verdict {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let (mmlu, mmlu_errors) = load_mmlu_csv_lenient(fixtures.join("astronomy_test.csv")).unwrap();
    let (fever, fever_errors) = load_fever_jsonl_lenient(fixtures.join("fever_dev.jsonl")).unwrap();

    let mmlu_ok = mmlu.len() == 8
        && mmlu.iter().all(|r| r.subject == "astronomy" && r.choices.len() == 4)
        && mmlu[1].question == "Which planet, apart from Earth, has liquid water on its surface today?"
        && mmlu[1].choices[2] == "None, as far as we know"
        && mmlu[1].answer_letter == 'C'
        && mmlu[3].question == "A \"light-year\" measures what?"
        && mmlu[7].question == "What is the name of the boundary\naround a black hole?"
        && mmlu.iter().map(|r| r.answer_letter).collect::<String>() == "BCBBBCAB";
    let mmlu_errors_ok = matches!(
        mmlu_errors.as_slice(),
        [DatasetError::WrongArity { row: 5, found: 5 }, DatasetError::Parse { row: 9, .. }]
    );

    let labels: Vec<_> = fever.iter().map(|r| r.label).collect();
    let ids: Vec<_> = fever.iter().map(|r| r.id.as_deref()).collect();
    let fever_ok = labels
        == [
            FeverLabel::Supports,
            FeverLabel::Refutes,
            FeverLabel::Supports,
            FeverLabel::NotEnoughInfo,
            FeverLabel::Supports,
            FeverLabel::Refutes,
        ]
        && ids == [Some("101"), Some("102"), Some("c-103"), None, Some("106"), Some("109")]
        && fever[2].claim == "A cat named Tom, a mouse named Jerry, and a dog named Spike co-starred.";
    let fever_errors_ok = matches!(
        fever_errors.as_slice(),
        [
            DatasetError::UnknownLabel { line: 5, .. },
            DatasetError::Parse { row: 8, .. },
            DatasetError::Parse { row: 9, .. },
            DatasetError::UnknownLabel { line: 11, .. },
        ]
    );
    ensure(
        mmlu_ok && mmlu_errors_ok && fever_ok && fever_errors_ok,
        format!(
            "mmlu {} records, errors {:?}; fever {} records, errors {:?}",
            mmlu.len(),
            mmlu_errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
            fever.len(),
            fever_errors.iter().map(|e| e.to_string()).collect::<Vec<_>>()
        ),
    )
}

fn diversity_bounds() -> Verdict {
    const WORDS: [&str; 12] = [
        "check",
        "units",
        "recall",
        "definition",
        "compare",
        "options",
        "eliminate",
        "the",
        "first",
        "claim",
        "evidence",
        "date",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 11);
    let mut out_of_range = 0;
    for _ in 0..1000 {
        let sets: Vec<Vec<String>> = (0..rng.gen_range(1..4))
            .map(|_| {
                (0..rng.gen_range(2..6))
                    .map(|_| {
                        (0..rng.gen_range(1..8))
                            .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect()
            })
            .collect();
        let d = direction_diversity(&sets, &TermFrequencyCosine).unwrap();
        out_of_range += !(0.0..=1.0).contains(&d) as usize;
    }
    let same = direction_diversity(&[vec!["Recall the definition."; 5]], &TermFrequencyCosine).unwrap();
    let disjoint =
        direction_diversity(&[vec!["check units", "recall definition", "eliminate options"]], &TermFrequencyCosine)
            .unwrap();
    ensure(
        out_of_range == 0 && same == 0.0 && disjoint == 1.0,
        format!("{out_of_range} of 1000 out of [0, 1]; identical {same}, disjoint {disjoint}"),
    )
}

fn main() -> ExitCode {
    let (ordering, presence) = ordering_and_presence();
    let criteria: Vec<(&str, Verdict)> = vec![
        ("uct exactness", uct_exactness()),
        ("backpropagation conservation", backprop_conservation()),
        ("early accept", early_accept()),
        ("aggregation bridge", aggregation_bridge()),
        ("policy ordering", ordering),
        ("answer presence trend", presence),
        ("depth bound", depth_bound()),
        ("validity filter", validity_filter()),
        ("determinism", determinism()),
        ("parsing conformance", parsing_conformance()),
        ("diversity bounds", diversity_bounds()),
    ];
    let mut failed = 0;
    for (i, (name, verdict)) in criteria.iter().enumerate() {
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
