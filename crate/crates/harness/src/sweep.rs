//! One-parameter grids over an experiment config.

use std::path::PathBuf;

use fltrigger_core::config::ExperimentConfig;
use fltrigger_core::defenses::DefenseKind;
use fltrigger_core::flcore::{run_experiment, RoundRecord};
use fltrigger_core::io::{render_round_csv, CSV_HEADER};
use fltrigger_core::{Error, Result};

/// Parameters `sweep --param` understands.
pub const SWEEP_PARAMS: &[&str] = &[
    "rho",
    "gamma_extract",
    "gamma_filter",
    "lambda_filter",
    "generator_epochs",
    "generator_lr",
    "eta",
    "alpha",
    "seed",
    "rounds",
    "poison_rate",
    "defense",
];

pub const SUMMARY_FILE: &str = "sweep_summary.csv";

fn parse<T: std::str::FromStr>(param: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {param}")))
}

/// Sets `param` to `value` and revalidates.
pub fn apply_param(cfg: &mut ExperimentConfig, param: &str, value: &str) -> Result<()> {
    let gen = &mut cfg.defense.generator;
    match param {
        "rho" => gen.rho = parse(param, value)?,
        "gamma_extract" => gen.gamma_extract = parse(param, value)?,
        "gamma_filter" => gen.gamma_filter = parse(param, value)?,
        "lambda_filter" => gen.lambda_filter = parse(param, value)?,
        "generator_epochs" => gen.epochs = parse(param, value)?,
        "generator_lr" => gen.lr = parse(param, value)?,
        "eta" => cfg.eta = parse(param, value)?,
        "alpha" => cfg.alpha = parse(param, value)?,
        "seed" => cfg.seed = parse(param, value)?,
        "rounds" => cfg.rounds = parse(param, value)?,
        "poison_rate" => cfg.attack.poison_rate = parse(param, value)?,
        "defense" => cfg.defense.kind = value.trim().parse::<DefenseKind>()?,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep parameter {other:?}; expected one of {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    cfg.validate()
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: String,
    pub dir: PathBuf,
    pub records: Vec<RoundRecord>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub summary_path: PathBuf,
}

/// Every per-round row of every grid point, prefixed by `param,value`.
pub fn render_summary(param: &str, points: &[SweepPoint]) -> String {
    let mut out = format!("param,value,{CSV_HEADER}\n");
    for p in points {
        for line in render_round_csv(&p.records).lines().skip(1) {
            out.push_str(&format!("{param},{},{line}\n", p.value));
        }
    }
    out
}

/// Runs one experiment per value in `<output_dir>/<param>_<value>` and
/// merges their round CSVs into `<output_dir>/sweep_summary.csv`. All
/// values are validated before the first run starts.
pub fn run_sweep(base: &ExperimentConfig, param: &str, values: &[String]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            apply_param(&mut cfg, param, v)?;
            cfg.output_dir = base.output_dir.join(format!("{param}_{}", v.trim()));
            Ok((v.trim().to_string(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(configs.len());
    for (value, cfg) in configs {
        let result = run_experiment(&cfg)?;
        points.push(SweepPoint {
            value,
            dir: cfg.output_dir,
            records: result.records,
        });
    }
    let summary_path = base.output_dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, render_summary(param, &points))
        .map_err(|e| Error::io(&summary_path, e))?;
    Ok(SweepResult { points, summary_path })
}
