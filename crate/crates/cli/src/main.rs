use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use active_sysid::config::{ExperimentConfig, TraceFormat};
use active_sysid::harness::{self, ReplicaTrace};
use active_sysid::{lemmas, Error};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "active-sysid",
    version,
    about = "Online Bayesian identification of recurrent networks with information-maximizing controls",
    after_help = override_help()
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file (simulate, compare, noise) or directory (identify).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Root seed for plant noise and randomized controls.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Dotted-key override such as `strategy.kind=zero`; repeatable.
    #[arg(long = "override", global = true, value_name = "K=V")]
    overrides: Vec<String>,

    /// Number of independent replicas.
    #[arg(long, global = true, value_name = "N")]
    replicas: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    /// Open-loop plant rollout (t, u, r, e) as CSV.
    Simulate,
    /// Closed-loop identification with the configured strategy.
    Identify,
    /// Run several strategies on the same plant and summarize errors.
    Compare,
    /// Compare noise-optimal control against the τ-switching heuristics.
    Noise,
    /// Run the numerical identity suites and report measured errors.
    ValidateLemmas,
}

fn override_help() -> String {
    let mut s = String::from("Override keys:\n");
    for k in ExperimentConfig::override_keys() {
        s.push_str("  ");
        s.push_str(&k);
        s.push('\n');
    }
    s.push_str("\nEnvironment:\n  ");
    s.push_str(harness::THREADS_ENV);
    s.push_str("  maximum worker threads for replicas\n");
    s
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(n) = cli.replicas {
        overrides.push(format!("replicas={n}"));
    }
    let cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config `{}`: {e}", path.display())))?;
            ExperimentConfig::from_json_str_with_overrides(&text, &overrides).map_err(|e| match e {
                Error::Config { path: field, message } => {
                    Failure::Config(format!("{}: config error at `{field}`: {message}", path.display()))
                }
                other => Failure::from(other),
            })?
        }
        None => ExperimentConfig::default_with_overrides(&overrides)?,
    };
    cfg.model.build().map_err(|e| Failure::Config(format!("config error at `model`: {e}")))?;
    Ok(cfg)
}

fn output_path(cli: &Cli, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cfg.output.path.as_ref().map(PathBuf::from))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

fn report_failures(traces: &[ReplicaTrace]) {
    for tr in traces {
        if let Some(f) = &tr.failure {
            eprintln!("replica {}: {f}", tr.replica);
        }
    }
}

fn simulate(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let rollout = harness::simulate_open_loop(cfg, 0)?;
    let mut buf = Vec::new();
    harness::write_rollout_csv(&rollout, &mut buf)?;
    write_text(output_path(cli, cfg).as_deref(), &String::from_utf8_lossy(&buf))
}

fn identify(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let runs = harness::run_experiment_with_states(cfg)?;
    let traces: Vec<ReplicaTrace> = runs.iter().map(|(t, _)| t.clone()).collect();
    report_failures(&traces);
    let mut summary = harness::Summary::new();
    summary.insert(cfg.strategy.label(), harness::summarize(&traces, cfg.horizon));
    let summary_text = harness::summary_json(&summary);
    match output_path(cli, cfg) {
        None => write_text(None, &(summary_text + "\n"))?,
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
            let model = cfg.model.build()?;
            for (trace, state) in &runs {
                let stem = format!("replica_{:03}", trace.replica);
                match cfg.output.format {
                    TraceFormat::Csv => {
                        let p = dir.join(format!("{stem}.csv"));
                        let file = fs::File::create(&p).map_err(|e| io_failure(&p, e))?;
                        harness::write_trace_csv(&trace.records, model.c(), model.d(), io::BufWriter::new(file))?;
                    }
                    TraceFormat::Json => {
                        let p = dir.join(format!("{stem}.json"));
                        let text = serde_json::to_string_pretty(trace).expect("trace serializes");
                        fs::write(&p, text).map_err(|e| io_failure(&p, e))?;
                    }
                }
                if let Some(state) = state {
                    let p = dir.join(format!("{stem}_snapshot.json"));
                    fs::write(&p, state.to_snapshot_json()).map_err(|e| io_failure(&p, e))?;
                }
            }
            let p = dir.join("summary.json");
            fs::write(&p, summary_text).map_err(|e| io_failure(&p, e))?;
        }
    }
    if traces.iter().any(|t| t.failure.is_some()) {
        return Err(Failure::Runtime("one or more replicas aborted".into()));
    }
    Ok(())
}

fn summary_verb(cli: &Cli, cfgs: Vec<ExperimentConfig>) -> Result<(), Failure> {
    let summary = harness::compare_strategies(&cfgs)?;
    let path = output_path(cli, &cfgs[0]);
    write_text(path.as_deref(), &(harness::summary_json(&summary) + "\n"))
}

fn validate_lemmas(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let reports = lemmas::run_all(cfg.seed)?;
    for r in &reports {
        println!("{}", r.line());
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Runtime("numerical identity check failed".into()))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match cli.verb {
        Verb::Simulate => simulate(cli, &cfg),
        Verb::Identify => identify(cli, &cfg),
        Verb::Compare => summary_verb(cli, harness::comparison_configs(&cfg)),
        Verb::Noise => summary_verb(cli, harness::noise_study_configs(&cfg)),
        Verb::ValidateLemmas => validate_lemmas(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
