use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mirror_core::runner::{self, Backend, BenchOptions, Overrides, RunConfig, RunError};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "mirror", version, about = "Reflective tree search over navigator directions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Replay,
    Synthetic,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Backend {
        match b {
            BackendArg::Http => Backend::Http,
            BackendArg::Replay => Backend::Replay,
            BackendArg::Synthetic => Backend::Synthetic,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment file
    config: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Record to (or replay from) this store
    #[arg(long)]
    store_path: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    consistency_threshold: Option<f64>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, usize), RunError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            store_path: self.store_path.clone(),
            backend: self.backend.map(Backend::from),
            consistency_threshold: self.consistency_threshold,
            branching: self.branching,
            max_iterations: self.max_iterations,
        });
        config.validate()?;
        let jobs = self.jobs.unwrap_or_else(|| runner::default_jobs(config.gateway.backend));
        Ok((config, jobs))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search every question of a dataset and write traces and metrics
    Run(RunArgs),
    /// Render a trace file as JSON or Graphviz DOT
    Export {
        trace: PathBuf,
        #[arg(long, default_value = "dot")]
        format: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Offline statistical checks on the synthetic backend
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        questions: usize,
        /// Replace the benchmark world's quality gain (0 disables direction lift)
        #[arg(long)]
        quality_gain: Option<f64>,
        /// Write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-run a recorded experiment offline and diff its outputs
    ReplayVerify {
        #[command(flatten)]
        run: RunArgs,
        /// Where the replayed outputs go
        #[arg(long)]
        replay_dir: PathBuf,
    },
}

fn exit_code(e: &RunError) -> u8 {
    match e {
        RunError::Transport { .. } | RunError::Gateway(_) => EXIT_TRANSPORT,
        RunError::Config(_) | RunError::Dataset(_) | RunError::UnknownFormat(_) => EXIT_CONFIG,
        RunError::Io { .. } | RunError::Search(_) => EXIT_CHECK_FAILED,
    }
}

fn execute(cli: Cli) -> Result<u8, RunError> {
    match cli.command {
        Command::Run(args) => {
            let (config, jobs) = args.load()?;
            let summary = runner::run(&config, jobs)?;
            let m = &summary.metrics;
            println!("questions: {} ({} failed)", m.questions, m.failed);
            if let Some(a) = m.accuracy {
                println!("accuracy: {a:.4}");
            }
            if let Some(p) = m.ans_presence {
                println!("ans_presence: {p:.4}");
            }
            println!("output: {}", summary.output_dir.display());
            Ok(0)
        }
        Command::Export { trace, format, output } => {
            let text = runner::export(&trace, &format)?;
            match output {
                Some(path) => fs::write(&path, text)
                    .map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Bench { seed, questions, quality_gain, report } => {
            let mut options = BenchOptions::new(seed);
            options.questions = questions;
            if let Some(g) = quality_gain {
                options.world.quality_gain = g;
            }
            let r = runner::bench(&options);
            for c in &r.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.observed);
            }
            println!("elapsed: {:.1}s", r.elapsed_secs);
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&r).expect("report serializes");
                fs::write(&path, text + "\n")
                    .map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?;
            }
            Ok(if r.passed() { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::ReplayVerify { run, replay_dir } => {
            let (config, jobs) = run.load()?;
            let r = runner::replay_verify(&config, &replay_dir, jobs)?;
            println!("compared {} files", r.compared);
            for m in &r.mismatched {
                println!("differs: {m}");
            }
            for m in &r.missing {
                println!("missing: {m}");
            }
            Ok(if r.identical() { 0 } else { EXIT_CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
