//! `lesiontl`: run lesion-classification transfer-learning experiments.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lesiontl_core::evaluation::{aggregate_reports, EvalError, EvaluationReport};
use lesiontl_core::experiment::{
    plan_experiment, run_experiment, ExperimentConfig, ExperimentError, Suite, EXIT_CONFIG, EXIT_PARTIAL,
};
use lesiontl_core::model::BackboneId;

#[derive(Parser, Debug)]
#[command(name = "lesiontl", version, about = "Transfer-learning experiments for melanoma vs benign lesion images")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Validate the config and print the run plan without training.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Suite members trained concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the suite named in the config (a single run by default).
    Run,
    /// Compare backbones on the same split.
    CompareArch {
        /// Comma-separated backbones, e.g. `alexnet_modified,vgg16,vgg19`.
        #[arg(long, value_delimiter = ',')]
        architectures: Option<Vec<String>>,
    },
    /// Compare Adam and SGD.
    CompareOpt,
    /// Ablate each removable head layer against a baseline.
    Ablate,
    /// Aggregate report.json files (or directories containing them) into a comparison table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_config(global: &GlobalArgs, suite: Option<Suite>) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| ExperimentError::Config(vec!["--config is required for this command".into()]))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(dir) = &global.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(suite) = suite {
        config.suite = suite;
    }
    Ok(config)
}

fn execute(global: &GlobalArgs, config: ExperimentConfig) -> Result<i32> {
    if global.dry_run {
        let plan = plan_experiment(&config)?;
        writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&plan)?)?;
        return Ok(0);
    }
    let outcome = run_experiment(&config, global.jobs)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "run directory: {}", outcome.run_dir.display())?;
    if let Some(table) = outcome.comparison_paths.iter().find(|p| p.extension().is_some_and(|e| e == "txt")) {
        write!(out, "{}", std::fs::read_to_string(table)?)?;
    }
    for run in &outcome.runs {
        writeln!(out, "{}: {}", run.label, run.report_path.display())?;
    }
    if outcome.is_partial() {
        for f in &outcome.failures {
            eprintln!("failed: {}: {}", f.label, f.reason);
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            collect_reports(&entry, out)?;
        } else if entry.file_name().is_some_and(|n| n == "report.json") {
            out.push(entry);
        }
    }
    Ok(())
}

fn report(inputs: &[PathBuf], csv: Option<&Path>) -> Result<i32> {
    let mut paths = Vec::new();
    for input in inputs {
        collect_reports(input, &mut paths)?;
    }
    let reports = paths.iter().map(|p| EvaluationReport::read_json(p)).collect::<Result<Vec<_>, _>>()?;
    let table = aggregate_reports(&reports)?;
    write!(std::io::stdout(), "{}", table.to_text())?;
    if let Some(path) = csv {
        std::fs::write(path, table.to_csv_string()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    let global = &cli.global;
    match &cli.command {
        Command::Run => execute(global, load_config(global, None)?),
        Command::CompareArch { architectures } => {
            let mut config = load_config(global, Some(Suite::CompareArchitectures))?;
            if let Some(names) = architectures {
                config.architectures = names
                    .iter()
                    .map(|n| n.parse::<BackboneId>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
            }
            execute(global, config)
        }
        Command::CompareOpt => execute(global, load_config(global, Some(Suite::CompareOptimizers))?),
        Command::Ablate => execute(global, load_config(global, Some(Suite::Ablation))?),
        Command::Report { inputs, csv } => report(inputs, csv.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<ExperimentError>() {
        e.exit_code()
    } else if let Some(EvalError::Schema(_)) = err.downcast_ref::<EvalError>() {
        EXIT_CONFIG
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        // downstream reader closed early, e.g. `| head`
        Err(err) if err.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
