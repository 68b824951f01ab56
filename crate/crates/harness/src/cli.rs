//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use fltrigger_core::config::ExperimentConfig;
use fltrigger_core::flcore::run_experiment;
use fltrigger_core::Error;

use crate::observe::{observe, render_report, write_observation, ObserveOptions};
use crate::oracle::run_equivalence;
use crate::sweep::run_sweep;

/// When set, relative `output_dir`s are placed under this directory.
pub const OUT_ENV: &str = "FLTRIGGER_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fltrigger", version, about = "Seeded federated-learning backdoor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment; writes rounds.csv and final_model.ckpt.
    Run { config: PathBuf },
    /// Train a base model, fine-tune a benign and a poisoned branch, and
    /// report what the generated images reveal about each.
    Observe {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the experiment once per value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Compare the robust aggregators with brute-force references.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Reads a config; every failure here counts as a configuration error.
fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(root) = std::env::var_os(OUT_ENV) {
        if cfg.output_dir.is_relative() {
            cfg.output_dir = PathBuf::from(root).join(&cfg.output_dir);
        }
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let result = run_experiment(&cfg)?;
            if let Some(last) = result.records.last() {
                println!(
                    "round {}: MA {:.4} ASR {:.4}",
                    last.round,
                    last.ma.unwrap_or(f64::NAN),
                    last.asr.unwrap_or(f64::NAN)
                );
            }
            println!("wrote {}", result.csv_path.display());
            println!("wrote {}", result.checkpoint_path.display());
        }
        Command::Observe { config, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let obs = observe(&cfg, &ObserveOptions::default())?;
            print!("{}", render_report(&obs)?);
            let path = write_observation(&obs, &cfg.output_dir.join("observe"))?;
            println!("wrote {}", path.display());
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = load_config(&config)?;
            let result = run_sweep(&cfg, &param, &values)?;
            for p in &result.points {
                let last = p.records.last();
                println!(
                    "{param}={}: final MA {:.4} ASR {:.4} -> {}",
                    p.value,
                    last.and_then(|r| r.ma).unwrap_or(f64::NAN),
                    last.and_then(|r| r.asr).unwrap_or(f64::NAN),
                    p.dir.display()
                );
            }
            println!("wrote {}", result.summary_path.display());
        }
        Command::OracleCheck { instances, seed } => {
            if instances == 0 {
                return Err(Failure::Config("--instances must be ≥ 1".into()));
            }
            let outcomes = run_equivalence(instances, seed);
            let mut failed = false;
            for o in &outcomes {
                println!(
                    "{:<18} {} instances, {} mismatches, max |diff| {:.3e}",
                    o.name, o.instances, o.mismatches, o.max_abs_diff
                );
                failed |= !o.passed();
            }
            if failed {
                return Err(Failure::Runtime("aggregator oracle mismatch".into()));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}
