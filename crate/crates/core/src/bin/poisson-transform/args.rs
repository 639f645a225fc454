//! Flags, the optional TOML config file, and their merge.
//!
//! Precedence: flag, then config file, then built-in default. The seed
//! falls back to `POISSON_TRANSFORM_SEED` before the built-in constant.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::Failure;

pub const SEED_ENV: &str = "POISSON_TRANSFORM_SEED";

#[derive(Debug, Parser)]
#[command(name = "poisson-transform", version, about = "Fit unnormalised models by the Poisson transform and noise-contrastive logistic regression")]
pub struct Cli {
    /// TOML file supplying defaults for any flag (keys use underscores, e.g. `lambda_grid`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a toy chain and write it as CSV (`t,y`).
    Simulate(SimulateArgs),
    /// Fit a chain from a CSV file, or simulate one from the model flags.
    Fit(FitArgs),
    /// Run the ML vs logistic-variant estimation benchmark.
    Benchmark(BenchmarkArgs),
    /// Run the invariant check suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// `toy` (Markov chain) or `toy-iid`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta2: Option<f64>,
    /// Initial point of the chain.
    #[arg(long, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    /// Master seed [env: POISSON_TRANSFORM_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Chain length (rows after `t = 0`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV with header `t,y` as written by `simulate`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Length of the simulated chain when no input is given.
    #[arg(long)]
    pub n: Option<usize>,
    /// ml | poisson | sga | ncd-iid | ncd-param | ncd-semi | ncd-ignore
    #[arg(long)]
    pub method: Option<String>,
    /// Reference draws per data point for the logistic variants.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fixed penalty weight (skips cross-validation).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated penalty grid for cross-validation.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Stochastic ascent steps (`sga`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Reference draws per stochastic step (`sga`).
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated chain lengths.
    #[arg(long)]
    pub n: Option<String>,
    /// Comma-separated reference ratios.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated subset of ml, ncd-param, ncd-semi, ncd-ignore.
    #[arg(long)]
    pub method: Option<String>,
    /// Fix theta1 (with --theta2) instead of drawing it per repetition.
    #[arg(long, allow_negative_numbers = true)]
    pub theta1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta2: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    /// Rows file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary file; defaults to `<out stem>_summary.<ext>`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Optional SVG chart of RMSE against n.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated suite names.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Perturb the analytic gradients (exercises the failure path).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub y0: Option<f64>,
    pub seed: Option<u64>,
    pub n: Option<OneOrMany<usize>>,
    pub k: Option<OneOrMany<usize>>,
    pub method: Option<OneOrMany<String>>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub steps: Option<usize>,
    pub draws: Option<usize>,
    pub reps: Option<usize>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    pub only: Option<OneOrMany<String>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, Failure> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }
}

pub fn seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(poisson_transform::rng::DEFAULT_SEED),
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Failure::usage(format!("invalid {what} entry '{p}'"))))
        .collect::<Result<Vec<T>, Failure>>()
        .and_then(|v| if v.is_empty() { Err(Failure::usage(format!("empty {what} list"))) } else { Ok(v) })
}
