use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use btrn::config::{ConfigError, ExperimentConfig};
use btrn::pipeline::{self, PipelineError};
use btrn::report::{self, Summary};
use clap::{Args, Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Movement-imagination EEG decoding experiments on synthetic recordings.
#[derive(Debug, Parser)]
#[command(name = "btrn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic recordings for both sessions of every subject.
    Synth(Common),
    /// Run the full evaluation and write the report.
    Run(Common),
    /// Check a config file against its schema and invariants.
    Validate(Common),
    /// Print the aggregates of a finished run.
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file; the built-in default when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated subject ids.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    subjects: Option<Vec<String>>,
    /// Synthesis seed, overriding the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Machine-readable output on stdout.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.synth.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        Ok(config)
    }
}

/// Reports an error and picks the exit code for it.
fn fail(e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    let invalid = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<ConfigError>(),
            Some(ConfigError::Invalid(_) | ConfigError::Parse { .. })
        ) || matches!(
            c.downcast_ref::<PipelineError>(),
            Some(
                PipelineError::UnknownSubject(_)
                    | PipelineError::Config(ConfigError::Invalid(_) | ConfigError::Parse { .. })
            )
        )
    });
    ExitCode::from(if invalid { EXIT_INVALID } else { EXIT_RUNTIME })
}

fn synth(args: &Common) -> anyhow::Result<ExitCode> {
    let config = args.load()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.join("recordings"));
    let written = pipeline::cmd_synth(&config, &out, args.subjects.as_deref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&written)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(args: &Common) -> anyhow::Result<ExitCode> {
    let config = args.load()?;
    let out = config.output_dir.clone();
    let outcome = pipeline::cmd_run(&config, &out, args.subjects.as_deref())?;
    log::info!("report written to {}", out.display());
    if args.json {
        print!("{}", Summary::new(&outcome.report).to_json());
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: {} cell(s) failed", outcome.failures.len());
        Ok(ExitCode::from(EXIT_RUNTIME))
    }
}

fn validate(args: &Common) -> anyhow::Result<ExitCode> {
    let path = args
        .config
        .as_deref()
        .context("validate needs --config PATH")?;
    let violations = match args.load() {
        Ok(config) => config.violations(),
        Err(e @ ConfigError::Io { .. }) => return Err(e.into()),
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    if args.json {
        let list: Vec<_> = violations
            .iter()
            .map(|v| serde_json::json!({ "field": v.field, "message": v.message }))
            .collect();
        println!(
            "{}",
            serde_json::json!({ "valid": list.is_empty(), "violations": list })
        );
    }
    if violations.is_empty() {
        if !args.json {
            println!("{}: valid", path.display());
        }
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("{}: {v}", path.display());
        }
        Ok(ExitCode::from(EXIT_INVALID))
    }
}

fn print_table(summary: &Summary) {
    println!(
        "{:<8} {:<11} {:<6} {:>3} {:>6} {:>6}",
        "method", "plane", "cond", "n", "mean", "std"
    );
    for r in &summary.aggregates {
        println!(
            "{:<8} {:<11} {:<6} {:>3} {:>6.2} {:>6.2}",
            r.row.method.as_str(),
            r.row.plane.as_str(),
            r.row.condition.as_str(),
            r.row.n_subjects,
            r.mean_2dp,
            r.std_2dp
        );
    }
}

fn show_report(args: &Common) -> anyhow::Result<ExitCode> {
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.load()?.output_dir,
    };
    let summary = report::load_summary(&Path::new(&dir).join("summary.json"))?;
    if args.json {
        print!("{}", summary.to_json());
    } else {
        print_table(&summary);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Report(a) => show_report(a),
    };
    result.unwrap_or_else(|e| fail(&e))
}
