//! Batch command-line interface.
//!
//! ```text
//! ctmc-move --config run.json --out results --seed 7 impute
//! ctmc-move --config run.json --out results expand
//! ctmc-move --config run.json --out results cv
//! ctmc-move --config run.json --out results fit
//! ctmc-move --config run.json --out results --seed 8 simulate
//! ```
//!
//! Exit codes: 0 success, 2 input error, 3 numerical non-convergence,
//! 4 internal invariant violation.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    load_expanded, DiscretizeManifest, ExpandManifest, FileEntry, ImputeManifest, Run, SimulateManifest,
    COEFFICIENTS_FILE, CV_CURVE_FILE, CV_FILE, DISCRETIZE_MANIFEST, EXPANDED_FILE, EXPAND_MANIFEST, FIT_FILE,
    IMPUTE_MANIFEST, OCCUPANCY_FILE, SIMULATE_MANIFEST,
};
pub use config::{ModelSource, PenaltyChoice, PenaltyConfig, RunConfig, SimulateConfig};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ctmc-move",
    version,
    about = "Discrete-space CTMC movement models from telemetry"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw imputed continuous paths between telemetry fixes.
    Impute,
    /// Convert imputed paths into chain paths on the grid.
    Discretize,
    /// Build the stacked Poisson data from imputed paths.
    Expand {
        /// Run `impute` first.
        #[arg(long)]
        impute: bool,
    },
    /// Fit the movement model to the stacked data.
    Fit,
    /// Cross-validate the penalty weight.
    Cv,
    /// Simulate paths from fitted coefficients and aggregate occupancy.
    Simulate,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::LinearAlgebra(_) => EXIT_NONCONVERGENCE,
        Error::Invariant(_) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}

pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32, Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config_path = cli.config.ok_or_else(|| Error::invalid("--config is required"))?;
    let config = RunConfig::from_path(&config_path)?;
    config.validate()?;
    let out = cli
        .out
        .or_else(|| config.output.clone())
        .ok_or_else(|| Error::invalid("no output directory (config `output` or --out)"))?;
    let run = Run {
        seed: cli.seed.or(config.seed),
        config,
        out,
    };
    match cli.command {
        Command::Impute => {
            let m = commands::impute(&run)?;
            println!(
                "wrote {} imputed paths (sigma = {}, time step = {})",
                m.paths.len(),
                m.sigma,
                m.time_step
            );
        }
        Command::Discretize => {
            let m = commands::discretize_paths(&run)?;
            println!("wrote {} chain paths", m.paths.len());
        }
        Command::Expand { impute } => {
            let m = commands::expand_paths(&run, impute)?;
            println!("wrote {} rows from {} imputations", m.data.rows, m.n_imputations);
        }
        Command::Fit => {
            let fit = commands::fit(&run)?;
            for t in crate::inference::wald_tests(&fit) {
                println!("{:<24} {:>12.6} {:>12.6}", t.label, t.estimate, t.std_error);
            }
            if !fit.converged() {
                eprintln!("error: fit did not converge ({:?})", fit.convergence.status);
                return Ok(EXIT_NONCONVERGENCE);
            }
        }
        Command::Cv => {
            let cv = commands::cv(&run)?;
            println!("lambda = {} ({} folds)", cv.best_lambda, cv.n_folds);
        }
        Command::Simulate => {
            let m = commands::simulate(&run)?;
            println!("wrote {} simulated paths and {}", m.paths.len(), OCCUPANCY_FILE);
        }
    }
    Ok(EXIT_OK)
}
