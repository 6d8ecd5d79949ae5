use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::pipeline::{execute, Command};
use super::report::report_dir;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fedseq",
    version,
    about = "Federated learning simulator with sequential superclient training"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Split the training set among clients and write partition.json.
    Partition(RunArgs),
    /// Pre-train clients and write their distribution estimates.
    Pretrain(RunArgs),
    /// Group clients into superclients and write grouping.csv.
    Group(RunArgs),
    /// Run the configured algorithm and write history.csv.
    Train(RunArgs),
    /// Train a single model on the pooled data.
    Centralized(RunArgs),
    /// Rounds-to-target and speedups over the runs in a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Centralized accuracy to use instead of the centralized runs found.
        #[arg(long)]
        target: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Configuration file (TOML with dotted sections).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path, &self.overrides).map_err(|e| match e {
                Error::Io { path, source } => {
                    Error::Config(format!("cannot read {}: {source}", path.display()))
                }
                other => other,
            }),
            (None, Some(name)) => {
                ExperimentConfig::parse(&format!("preset = {:?}", name), &self.overrides)
            }
            (None, None) => Err(Error::Config(
                "either --config or --preset is required".into(),
            )),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownKey { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (command, args) = match cli.command {
        Sub::Report { dir, target } => {
            let rows = report_dir(&dir, target)?;
            println!(
                "{} rows written to {}",
                rows.len(),
                dir.join("speedups.csv").display()
            );
            return Ok(());
        }
        Sub::Partition(a) => (Command::Partition, a),
        Sub::Pretrain(a) => (Command::Pretrain, a),
        Sub::Group(a) => (Command::Group, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Centralized(a) => (Command::Centralized, a),
    };
    let config = args.resolve()?;
    let dir = config.output_dir.clone();
    let manifest = execute(command, config)?;
    if let (true, Some(reason)) = (manifest.diverged, manifest.divergence.clone()) {
        let round = manifest.rounds_completed.unwrap_or(0) + 1;
        return Err(Error::Divergence { round, reason });
    }
    match manifest.final_accuracy {
        Some(acc) => println!(
            "{}: final accuracy {acc:.4}, outputs in {dir}",
            command.name()
        ),
        None => println!("{}: outputs in {dir}", command.name()),
    }
    Ok(())
}

/// Parses `argv` and runs the subcommand. Returns the process exit code: 0 on success,
/// 2 on configuration errors, 3 when training diverged, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
