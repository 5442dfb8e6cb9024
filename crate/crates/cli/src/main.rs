//! `planecal`: pool generation, posture selection, calibration and
//! validation over JSON/CSV artifacts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "planecal", version, about = "Plane-contact kinematic calibration")]
struct Cli {
    /// Re-validate artifact files and exit.
    #[arg(long, value_name = "FILE", num_args = 1.., global = true)]
    check: Vec<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the one in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a pool of feasible contact postures.
    Genpool {
        #[command(flatten)]
        common: Common,
        /// Overrides the pool seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Select calibration postures from the pool.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Iroc)]
        method: Method,
        /// Overrides the selection seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate base parameters from a posture dataset.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV, overriding the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Calibrate on a training set and evaluate on held-out postures.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Accept postures shared between training and test sets.
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Draw a ground truth and write a synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarise the artifacts of an output directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Iroc,
    Detmax,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Iroc => "iroc",
            Method::Detmax => "detmax",
            Method::Random => "random",
        }
    }
}

/// Marks an error as bad input (exit code 2).
#[derive(Debug)]
pub struct BadInput(pub String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

impl BadInput {
    pub fn wrap(e: anyhow::Error) -> anyhow::Error {
        anyhow::Error::new(BadInput(format!("{e:#}")))
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    use planecal::Error as E;
    for cause in e.chain() {
        if cause.is::<BadInput>() {
            return ("bad_input", 2);
        }
        if let Some(pe) = cause.downcast_ref::<E>() {
            return match pe {
                E::PartialPool { .. } => ("partial_pool", 2),
                E::InvalidArgument(_) => ("invalid_argument", 2),
                E::Io(_) => ("io", 2),
                E::Json(_) | E::Csv(_) | E::Format(_) => ("format", 2),
                E::Singular(_) => ("singular", 3),
                E::NonFinite(_) => ("non_finite", 3),
                E::DegenerateOrientation { .. } => ("degenerate_orientation", 3),
            };
        }
    }
    ("bad_input", 2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = if !cli.check.is_empty() {
        commands::check(&cli.check)
    } else {
        match cli.command {
            None => {
                eprintln!("nothing to do: give a subcommand or --check FILE");
                return ExitCode::from(2);
            }
            Some(Command::Genpool { common, seed }) => commands::genpool(&common, seed),
            Some(Command::Select { common, method, seed }) => commands::select(&common, method, seed),
            Some(Command::Calibrate { common, dataset }) => commands::calibrate(&common, dataset),
            Some(Command::Validate {
                common,
                train,
                test,
                allow_overlap,
            }) => commands::validate(&common, train, test, allow_overlap),
            Some(Command::Simulate { common, seed }) => commands::simulate(&common, seed),
            Some(Command::Report { common }) => commands::report(&common),
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let msg = serde_json::json!({
                "error": kind,
                "message": format!("{e:#}"),
                "exit_code": code,
            });
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
