//! Run orchestration behind the command-line tool: load questions, build the
//! gateway stack, search every question on a worker pool and write traces,
//! metrics and a run manifest.

mod bench;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{
    bench, ordering_config, random_tree, run_benchmark, BenchCheck, BenchOptions, BenchReport, PolicyScores, ALPHA,
};
pub use config::{AgentsConfig, Backend, ConfigError, DatasetConfig, GatewayConfig, Overrides, RunConfig};

use crate::agents::{AgentError, Agents, TemplateLibrary};
use crate::consistency::{aggregate_final, AggregationInput, AggregationPolicy};
use crate::datasets::{self, DatasetError};
use crate::evaluation::{
    accuracy, ans_presence, changed_unchanged, depth_distribution, direction_diversity, synth_benchmark,
    write_per_question_csv, MetricsReport, QuestionResult, RunMetrics, TermFrequencyCosine,
};
use crate::gateway::{
    Gateway, GatewayError, GenerationParams, HttpConfig, HttpGateway, RecordStore, RecordingGateway, ReplayGateway,
    SyntheticGateway,
};
use crate::model::Question;
use crate::search::{mirror_search, to_dot, SearchConfig, SearchError, SearchOutcome, SearchTrace, TraceEvent};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("gateway setup failed: {0}")]
    Gateway(GatewayError),
    #[error("transport failure on question {question}: {error}")]
    Transport { question: String, error: GatewayError },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown export format {0:?} (expected json or dot)")]
    UnknownFormat(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl RunError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Experiment definition echoed into `metrics.json`. The gateway block is left
/// out so a recorded run and its replay produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEcho {
    pub dataset: DatasetConfig,
    pub search: SearchConfig,
    pub aggregation: AggregationPolicy,
    pub agents: AgentsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub backend: Backend,
    pub questions: usize,
    pub completed: Vec<String>,
    pub failures: Vec<QuestionFailure>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub metrics: RunMetrics,
    pub manifest: RunManifest,
}

pub fn trace_file_name(question_id: &str) -> String {
    let safe: String =
        question_id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    format!("{safe}.json")
}

fn load_mmlu(path: &Path) -> Result<Vec<datasets::MmluRecord>, RunError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| RunError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(datasets::load_mmlu_csv(&f)?);
        }
        Ok(out)
    } else {
        Ok(datasets::load_mmlu_csv(path)?)
    }
}

/// Questions to run plus, for synthetic datasets, their scripted gateway.
pub fn load_questions(config: &RunConfig) -> Result<(Vec<Question>, Option<SyntheticGateway>), RunError> {
    match &config.dataset {
        DatasetConfig::Synthetic { questions, world } => {
            let bench = synth_benchmark(*questions, world, config.search.seed);
            let gateway = SyntheticGateway::from_benchmark(&bench);
            Ok((bench.into_iter().map(|(q, _)| q).collect(), Some(gateway)))
        }
        DatasetConfig::Mmlu { path, per_subject, limit, domains } => {
            let mut records = load_mmlu(path)?;
            if !domains.is_empty() {
                records.retain(|r| domains.contains(&datasets::mmlu_domain(&r.subject)));
            }
            let mut counters: BTreeMap<String, usize> = BTreeMap::new();
            let mut questions: Vec<Question> = records
                .iter()
                .map(|r| {
                    let n = counters.entry(r.subject.clone()).or_insert(0);
                    *n += 1;
                    r.to_question(format!("{}-{:04}", r.subject, *n - 1))
                })
                .collect();
            if let Some(k) = per_subject {
                questions = datasets::sample_split(
                    &questions,
                    |q| q.subject.clone().unwrap_or_default(),
                    *k,
                    config.search.seed,
                )
                .0;
            }
            if let Some(l) = limit {
                questions.truncate(*l);
            }
            Ok((questions, None))
        }
        DatasetConfig::Fever { path, limit } => {
            let records = datasets::load_fever_jsonl(path)?;
            let mut questions: Vec<Question> = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.to_question(r.id.clone().map_or_else(|| format!("fever-{i:05}"), |id| format!("fever-{id}")))
                })
                .collect();
            if let Some(l) = limit {
                questions.truncate(*l);
            }
            Ok((questions, None))
        }
    }
}

fn build_gateway(config: &RunConfig, synthetic: Option<SyntheticGateway>) -> Result<Box<dyn Gateway>, RunError> {
    let g = &config.gateway;
    let base: Box<dyn Gateway> = match g.backend {
        Backend::Http => {
            let http = HttpConfig::new(g.base_url.clone().unwrap_or_default(), g.model.clone().unwrap_or_default());
            Box::new(HttpGateway::new(http).map_err(RunError::Gateway)?)
        }
        Backend::Replay => {
            let path = g.store_path.as_ref().expect("validated");
            return Ok(Box::new(ReplayGateway::from_store(path).map_err(RunError::Gateway)?));
        }
        Backend::Synthetic => Box::new(synthetic.ok_or_else(|| {
            RunError::Config(ConfigError::Invalid {
                field: "gateway.backend".into(),
                reason: "the synthetic backend only serves synthetic datasets".into(),
            })
        })?),
    };
    match &g.store_path {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
            }
            let store = RecordStore::create(path).map_err(RunError::Gateway)?;
            Ok(Box::new(RecordingGateway::new(base, store)))
        }
        None => Ok(base),
    }
}

pub fn build_agents(config: &AgentsConfig) -> Result<Agents, AgentError> {
    let templates = match &config.templates_dir {
        Some(dir) => TemplateLibrary::load(dir)?,
        None => TemplateLibrary::default(),
    };
    Ok(Agents {
        templates,
        params: GenerationParams {
            temperature: config.temperature,
            sample: config.sample,
            max_tokens: config.max_tokens,
            seed: None,
        },
        direction_source: config.direction_source,
        ..Agents::default()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| RunError::io(path, e))
}

/// Summary row and tree statistics for one finished search.
pub fn question_result(question: &Question, outcome: &SearchOutcome, policy: AggregationPolicy) -> QuestionResult {
    let final_answer = aggregate_final(AggregationInput::Tree(&outcome.tree), policy).unwrap_or(outcome.answer);
    QuestionResult {
        question_id: question.id.clone(),
        gold: question.gold,
        initial_answer: outcome.tree.intra.top_answer,
        final_answer,
        correct: question.gold.map(|g| g == final_answer),
        intra_confidence: outcome.tree.intra.confidence,
        stop_reason: outcome.stop_reason,
        tree_nodes: outcome.tree.len(),
        tree_depth: outcome.tree.max_depth(),
        expansions: outcome.tree.nodes().iter().filter(|n| n.inter_consistency.is_some()).count(),
        ans_present: question.gold.map(|g| outcome.tree.answers().any(|a| a == g)),
    }
}

/// Metrics over finished searches; `failed` counts questions that errored.
pub fn compute_metrics(
    results: &[(&Question, &SearchOutcome)],
    policy: AggregationPolicy,
    max_depth: usize,
    failed: usize,
) -> RunMetrics {
    let per_question: Vec<QuestionResult> = results.iter().map(|(q, o)| question_result(q, o, policy)).collect();
    let graded: Vec<QuestionResult> = per_question.iter().filter(|r| r.gold.is_some()).cloned().collect();
    let with_gold: Vec<_> = results.iter().filter_map(|(q, o)| q.gold.map(|g| (&o.tree, g))).collect();

    let initial: Vec<_> = graded.iter().map(|r| r.initial_answer).collect();
    let finals: Vec<_> = graded.iter().map(|r| r.final_answer).collect();
    let golds: Vec<_> = graded.iter().filter_map(|r| r.gold).collect();
    let changed = changed_unchanged(&initial, &finals, &golds).ok();

    let direction_sets: Vec<Vec<String>> = results
        .iter()
        .filter_map(|(_, o)| {
            o.trace.events.iter().find_map(|e| match e {
                TraceEvent::Expand { directions, .. } if directions.len() >= 2 => {
                    Some(directions.iter().map(|d| d.text.clone()).collect())
                }
                _ => None,
            })
        })
        .collect();

    let mut stop_reasons = BTreeMap::new();
    for r in &per_question {
        *stop_reasons.entry(format!("{:?}", r.stop_reason)).or_insert(0) += 1;
    }

    RunMetrics {
        questions: results.len() + failed,
        failed,
        accuracy: accuracy(&graded).ok(),
        ans_presence: ans_presence(with_gold.iter().map(|(t, g)| (*t, *g))).ok(),
        depth_histogram: depth_distribution(results.iter().map(|(_, o)| &o.tree), max_depth),
        changed_fraction: changed.map(|c| c.0),
        unchanged_fraction: changed.map(|c| c.1),
        direction_diversity: direction_diversity(&direction_sets, &TermFrequencyCosine).ok(),
        stop_reasons,
        per_question,
    }
}

/// Executes a run with `jobs` workers.
pub fn run(config: &RunConfig, jobs: usize) -> Result<RunSummary, RunError> {
    config.validate()?;
    let agents = build_agents(&config.agents).map_err(|e| {
        RunError::Config(ConfigError::Invalid { field: "agents.templates_dir".into(), reason: e.to_string() })
    })?;
    let (questions, synthetic) = load_questions(config)?;
    let gateway = build_gateway(config, synthetic)?;

    let out = &config.output_dir;
    let traces_dir = out.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| RunError::io(&traces_dir, e))?;
    if let DatasetConfig::Mmlu { per_subject: Some(_), .. } = config.dataset {
        let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
        datasets::write_split_manifest(&ids, out.join("split.json"))?;
    }
    let manifest_path = out.join("manifest.json");
    let mut manifest = RunManifest {
        status: RunStatus::Running,
        backend: config.gateway.backend,
        questions: questions.len(),
        completed: Vec::new(),
        failures: Vec::new(),
    };
    write_json(&manifest_path, &manifest)?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| RunError::io(out, e))?;
    let abort = AtomicBool::new(false);
    let transport: Mutex<Option<(String, GatewayError)>> = Mutex::new(None);
    let outcomes: Vec<Option<Result<SearchOutcome, String>>> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| {
                if abort.load(Ordering::SeqCst) {
                    return None;
                }
                match mirror_search(q, &config.search, &agents, gateway.as_ref()) {
                    Ok(o) => {
                        let path = traces_dir.join(trace_file_name(&q.id));
                        let mut text = o.trace.to_json();
                        text.push('\n');
                        if let Err(e) = fs::write(&path, text) {
                            return Some(Err(format!("writing {}: {e}", path.display())));
                        }
                        Some(Ok(o))
                    }
                    Err(e) if e.is_transport() => {
                        abort.store(true, Ordering::SeqCst);
                        let mut slot = transport.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some((q.id.clone(), e.gateway_error().cloned().expect("transport error")));
                        }
                        Some(Err(e.to_string()))
                    }
                    Err(e) => Some(Err(e.to_string())),
                }
            })
            .collect()
    });
    drop(gateway);

    let mut finished = Vec::new();
    for (q, o) in questions.iter().zip(&outcomes) {
        match o {
            Some(Ok(outcome)) => {
                manifest.completed.push(q.id.clone());
                finished.push((q, outcome));
            }
            Some(Err(error)) => {
                manifest.failures.push(QuestionFailure { question_id: q.id.clone(), error: error.clone() })
            }
            None => {}
        }
    }

    if let Some((question, error)) = transport.into_inner().unwrap() {
        manifest.status = RunStatus::Interrupted;
        write_json(&manifest_path, &manifest)?;
        return Err(RunError::Transport { question, error });
    }

    let metrics = compute_metrics(&finished, config.aggregation, config.search.max_depth, manifest.failures.len());
    let report = MetricsReport {
        config: ExperimentEcho {
            dataset: config.dataset.clone(),
            search: config.search.clone(),
            aggregation: config.aggregation,
            agents: config.agents.clone(),
        },
        metrics: metrics.clone(),
    };
    let metrics_path = out.join("metrics.json");
    report.write_json(&metrics_path).map_err(|e| RunError::io(&metrics_path, e))?;
    let csv_path = out.join("per_question.csv");
    write_per_question_csv(&metrics.per_question, &csv_path).map_err(|e| RunError::io(&csv_path, e))?;

    manifest.status = RunStatus::Complete;
    write_json(&manifest_path, &manifest)?;
    Ok(RunSummary { output_dir: out.clone(), metrics, manifest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = RunError;
    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(RunError::UnknownFormat(other.to_string())),
        }
    }
}

/// Renders a trace file as JSON (verbatim) or Graphviz DOT.
pub fn export(trace_path: &Path, format: &str) -> Result<String, RunError> {
    let format: ExportFormat = format.parse()?;
    let text = fs::read_to_string(trace_path).map_err(|e| RunError::io(trace_path, e))?;
    let trace = SearchTrace::from_json(&text)?;
    match format {
        ExportFormat::Json => Ok(text),
        ExportFormat::Dot => Ok(to_dot(&trace.rebuild_tree()?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub compared: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Replays `config`'s recorded store into `replay_dir` and compares every
/// trace and `metrics.json` with the original output byte for byte.
pub fn replay_verify(config: &RunConfig, replay_dir: &Path, jobs: usize) -> Result<ReplayReport, RunError> {
    let store = config.gateway.store_path.clone().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid {
            field: "gateway.store_path".into(),
            reason: "replay-verify needs the recorded store".into(),
        })
    })?;
    let mut replay = config.clone();
    replay.gateway = GatewayConfig { backend: Backend::Replay, base_url: None, model: None, store_path: Some(store) };
    replay.output_dir = replay_dir.to_path_buf();
    run(&replay, jobs)?;

    let mut report = ReplayReport { compared: 0, mismatched: Vec::new(), missing: Vec::new() };
    let original = &config.output_dir;
    let mut files = vec![PathBuf::from("metrics.json")];
    let traces = original.join("traces");
    let mut names: Vec<_> = fs::read_dir(&traces)
        .map_err(|e| RunError::io(&traces, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name()))
        .collect();
    names.sort();
    files.extend(names.into_iter().map(|n| Path::new("traces").join(n)));
    for rel in files {
        let a = fs::read(original.join(&rel));
        let b = fs::read(replay_dir.join(&rel));
        let name = rel.display().to_string();
        match (a, b) {
            (Ok(a), Ok(b)) => {
                report.compared += 1;
                if a != b {
                    report.mismatched.push(name);
                }
            }
            _ => report.missing.push(name),
        }
    }
    Ok(report)
}

/// Default worker count: logical cores, capped at 8 for HTTP.
pub fn default_jobs(backend: Backend) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match backend {
        Backend::Http => cores.min(8),
        _ => cores,
    }
}
