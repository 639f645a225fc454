//! `poisson-transform` command-line tool.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error.

mod args;
mod io;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use poisson_transform::chain::{self, BenchmarkConfig, Method, PenaltyChoice};
use poisson_transform::checks::{self, CheckConfig};
use poisson_transform::mc::{sga_fit, SgaSchedule};
use poisson_transform::model::{uniform_reference, EnergyModel};
use poisson_transform::ncd::{self, DEFAULT_FOLDS, DEFAULT_K};
use poisson_transform::objective::{fit_poisson_chi, fit_poisson_joint, PenaltyConfig};
use poisson_transform::quadrature::{fit_ml, gauss_legendre, DEFAULT_NODES};
use poisson_transform::rng::stream;
use poisson_transform::{FitOptions, FitResult, Kernel, NuEstimate, ParamVector, SampleSet, ToyChain, ToyIid};

use args::{BenchmarkArgs, CheckArgs, Cli, Command, FileConfig, FitArgs, Format, ModelArgs, SimulateArgs};

const DEFAULT_THETA: [f64; 2] = [0.0, 2.0];
const DEFAULT_N: usize = 1000;
const DEFAULT_SGA_STEPS: usize = 10_000;
const DEFAULT_SGA_DRAWS: usize = 50;
/// Penalty for `poisson` on the chain model when `--lambda` is absent.
const DEFAULT_CHI_LAMBDA: f64 = 1e-6;

// Stream labels under the master seed.
const SIMULATE_STREAM: u64 = 0;
const REFERENCE_STREAM: u64 = 1;
const CV_STREAM: u64 = 2;
const SGA_STREAM: u64 = 3;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<poisson_transform::Error> for Failure {
    fn from(e: poisson_transform::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &file).map(|_| 0),
        Command::Fit(a) => fit(a, &file).map(|_| 0),
        Command::Benchmark(a) => benchmark(a, &file).map(|_| 0),
        Command::Check(a) => check(a, &file),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ModelKind {
    Chain,
    Iid,
}

impl ModelKind {
    fn parse(s: &str) -> Result<Self, Failure> {
        match s {
            "toy" | "toy-chain" => Ok(ModelKind::Chain),
            "toy-iid" => Ok(ModelKind::Iid),
            other => Err(Failure::usage(format!("unknown model '{other}' (expected toy or toy-iid)"))),
        }
    }

    fn model(self) -> &'static dyn EnergyModel {
        match self {
            ModelKind::Chain => &ToyChain,
            ModelKind::Iid => &ToyIid,
        }
    }
}

struct Resolved {
    kind: ModelKind,
    theta: ParamVector,
    y0: f64,
    seed: u64,
}

fn resolve_model(m: &ModelArgs, file: &FileConfig) -> Result<Resolved, Failure> {
    let kind = ModelKind::parse(m.model.as_deref().or(file.model.as_deref()).unwrap_or("toy"))?;
    let theta = ParamVector::new(vec![
        m.theta1.or(file.theta1).unwrap_or(DEFAULT_THETA[0]),
        m.theta2.or(file.theta2).unwrap_or(DEFAULT_THETA[1]),
    ])?;
    let y0 = m.y0.or(file.y0).unwrap_or(0.0);
    Ok(Resolved { kind, theta, y0, seed: args::seed(m.seed, file.seed)? })
}

fn single<T: Clone>(v: Option<&args::OneOrMany<T>>, what: &str) -> Result<Option<T>, Failure> {
    match v.map(|v| v.to_vec()) {
        None => Ok(None),
        Some(v) if v.len() == 1 => Ok(Some(v[0].clone())),
        Some(_) => Err(Failure::usage(format!("config key '{what}' must be a single value for this subcommand"))),
    }
}

fn simulate_chain(r: &Resolved, n: usize) -> Result<SampleSet, Failure> {
    if n == 0 {
        return Err(Failure::usage("n must be >= 1"));
    }
    Ok(chain::sample_chain(r.kind.model(), &r.theta, n, r.y0, &mut stream(r.seed, &[SIMULATE_STREAM]))?)
}

fn simulate(a: SimulateArgs, file: &FileConfig) -> Result<(), Failure> {
    let r = resolve_model(&a.model, file)?;
    let n = a.n.or(single(file.n.as_ref(), "n")?).unwrap_or(DEFAULT_N);
    let sample = simulate_chain(&r, n)?;
    let text = match a.format.or(file.format).unwrap_or(Format::Csv) {
        Format::Csv => io::chain_csv(&sample),
        Format::Json => io::chain_json(&sample),
    };
    io::write_output(a.out.as_deref().or(file.out.as_deref()), &text)
}

fn lambda_grid(flag: Option<&str>, file: Option<&Vec<f64>>) -> Result<Vec<f64>, Failure> {
    match (flag, file) {
        (Some(s), _) => args::parse_list(s, "lambda grid"),
        (None, Some(v)) if !v.is_empty() => Ok(v.clone()),
        (None, Some(_)) => Err(Failure::usage("empty lambda grid")),
        (None, None) => Ok(ncd::default_lambda_grid()),
    }
}

fn nu_summary(nu: &NuEstimate) -> Value {
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        json!({ "len": v.len(), "mean": mean, "min": min, "max": max })
    };
    match nu {
        NuEstimate::None => Value::Null,
        NuEstimate::Scalar(v) => json!({ "kind": "scalar", "value": v }),
        NuEstimate::Vector(v) => json!({ "kind": "vector", "summary": stats(v) }),
        NuEstimate::Kernel(chi) => json!({
            "kind": "kernel",
            "bandwidth": chi.kernel().bandwidth(),
            "centers": chi.centers().len(),
            "rkhs_norm_sq": chi.rkhs_norm_sq().ok(),
        }),
        NuEstimate::Semi { intercept, chi } => json!({
            "kind": "semi",
            "intercept": intercept,
            "bandwidth": chi.kernel().bandwidth(),
            "centers": chi.centers().len(),
        }),
    }
}

struct FitReport {
    method: String,
    fit: FitResult,
    seed: u64,
    k: Option<usize>,
    lambda: Option<f64>,
}

impl FitReport {
    fn json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("method".into(), json!(self.method));
        obj.insert("theta_hat".into(), json!(self.fit.theta_hat.to_vec()));
        obj.insert("nu_summary".into(), nu_summary(&self.fit.nu_hat));
        if let Some(c) = &self.fit.covariance {
            let rows: Vec<Vec<f64>> = (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect();
            obj.insert("covariance".into(), json!(rows));
        }
        obj.insert("objective".into(), json!(self.fit.objective));
        obj.insert("converged".into(), json!(self.fit.converged));
        obj.insert("seed".into(), json!(self.seed));
        if let Some(k) = self.k {
            obj.insert("k".into(), json!(k));
        }
        if let Some(l) = self.lambda {
            obj.insert("lambda".into(), json!(l));
        }
        Value::Object(obj)
    }

    fn csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let t = &self.fit.theta_hat;
        format!(
            "method,theta1_hat,theta2_hat,objective,converged,seed,k,lambda\n{},{},{},{},{},{},{},{}\n",
            self.method,
            t[0],
            t.get(1).map(|v| v.to_string()).unwrap_or_default(),
            self.fit.objective,
            self.fit.converged,
            self.seed,
            opt(self.k.map(|k| k.to_string())),
            opt(self.lambda.map(|l| l.to_string())),
        )
    }
}

fn fit(a: FitArgs, file: &FileConfig) -> Result<(), Failure> {
    let r = resolve_model(&a.model, file)?;
    let model = r.kind.model();
    let method = match (&a.method, single(file.method.as_ref(), "method")?) {
        (Some(m), _) => m.clone(),
        (None, Some(m)) => m,
        (None, None) => "ml".to_string(),
    };
    let input: Option<PathBuf> = a.input.clone().or(file.input.clone());
    let sample = match &input {
        Some(p) => io::read_chain(p, model.domain())?,
        None => simulate_chain(&r, a.n.or(single(file.n.as_ref(), "n")?).unwrap_or(DEFAULT_N))?,
    };
    let k = a.k.or(single(file.k.as_ref(), "k")?).unwrap_or(DEFAULT_K);
    let folds = a.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS);
    let lambda_flag = a.lambda.or(file.lambda);
    let opts = FitOptions::default();
    let rule = gauss_legendre(DEFAULT_NODES, model.domain())?;
    let q = uniform_reference(model.domain());
    let ncd_data = || ncd::build_dataset(&sample, &q, k, &mut stream(r.seed, &[REFERENCE_STREAM]));

    let (fit, k_out, lambda_out) = match method.as_str() {
        "ml" => (fit_ml(model, &sample, &rule, &opts)?, None, None),
        "poisson" => match r.kind {
            ModelKind::Iid => (fit_poisson_joint(model, &sample, &rule, &opts)?, None, None),
            ModelKind::Chain => {
                let lambda = lambda_flag.unwrap_or(DEFAULT_CHI_LAMBDA);
                let kernel = Kernel::from_median(&sample.ancestors())?;
                let fit = fit_poisson_chi(model, &sample, &rule, kernel, &PenaltyConfig::fixed(lambda)?, &opts)?;
                (fit, None, Some(lambda))
            }
        },
        "sga" => {
            if r.kind == ModelKind::Chain {
                return Err(Failure::usage("method sga applies to the IID model only (use --model toy-iid)"));
            }
            let steps = a.steps.or(file.steps).unwrap_or(DEFAULT_SGA_STEPS);
            let draws = a.draws.or(file.draws).unwrap_or(DEFAULT_SGA_DRAWS);
            let schedule = SgaSchedule::default_for(sample.len(), steps);
            let theta0 = ParamVector::zeros(model.dim())?;
            let mut rng = stream(r.seed, &[SGA_STREAM]);
            (sga_fit(model, &sample, &q, &schedule, draws, &theta0, 0.0, &mut rng)?, None, None)
        }
        "ncd-iid" => (ncd::fit_ncd_iid(model, &ncd_data()?, &opts)?.to_fit_result(), Some(k), None),
        "ncd-param" => (ncd::fit_ncd_param(model, &ncd_data()?, &opts)?.to_fit_result(), Some(k), None),
        "ncd-ignore" => (ncd::fit_ncd_ignore(model, &ncd_data()?, &opts)?.to_fit_result(), Some(k), None),
        "ncd-semi" => {
            let data = ncd_data()?;
            let kernel = Kernel::from_median(&data.ancestors())?;
            let lambda = match lambda_flag {
                Some(l) => l,
                None => {
                    let grid = lambda_grid(a.lambda_grid.as_deref(), file.lambda_grid.as_ref())?;
                    let mut rng = stream(r.seed, &[CV_STREAM]);
                    ncd::select_lambda(model, &data, kernel, &grid, folds, &opts, &mut rng)?
                }
            };
            (ncd::fit_ncd_semi(model, &data, kernel, lambda, &opts)?.to_fit_result(), Some(k), Some(lambda))
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown method '{other}' (expected ml, poisson, sga, ncd-iid, ncd-param, ncd-semi or ncd-ignore)"
            )))
        }
    };
    for d in &fit.diagnostics {
        eprintln!("note: {d}");
    }
    let report = FitReport { method, fit, seed: r.seed, k: k_out, lambda: lambda_out };
    let text = match a.format.or(file.format).unwrap_or(Format::Json) {
        Format::Json => serde_json::to_string_pretty(&report.json()).expect("serialisable") + "\n",
        Format::Csv => report.csv(),
    };
    io::write_output(a.out.as_deref().or(file.out.as_deref()), &text)
}

fn summary_path(out: &Path, ext: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "benchmark".into());
    out.with_file_name(format!("{stem}_summary.{ext}"))
}

fn benchmark(a: BenchmarkArgs, file: &FileConfig) -> Result<(), Failure> {
    let mut config = BenchmarkConfig::default();
    if let Some(n) = &a.n {
        config.n_values = args::parse_list(n, "n")?;
    } else if let Some(n) = &file.n {
        config.n_values = n.to_vec();
    }
    if let Some(k) = &a.k {
        config.k_values = args::parse_list(k, "k")?;
    } else if let Some(k) = &file.k {
        config.k_values = k.to_vec();
    }
    let methods: Option<Vec<String>> = match (&a.method, &file.method) {
        (Some(m), _) => Some(args::parse_list(m, "method")?),
        (None, Some(m)) => Some(m.to_vec()),
        (None, None) => None,
    };
    if let Some(ms) = methods {
        config.methods = ms.iter().map(|m| Method::parse(m)).collect::<Result<_, _>>()?;
        config.methods.dedup();
    }
    if let Some(r) = a.reps.or(file.reps) {
        config.repetitions = r;
    }
    config.fixed_theta = match (a.theta1.or(file.theta1), a.theta2.or(file.theta2)) {
        (Some(t1), Some(t2)) => Some([t1, t2]),
        (None, None) => None,
        _ => return Err(Failure::usage("a fixed parameter needs both --theta1 and --theta2")),
    };
    config.penalty = match a.lambda.or(file.lambda) {
        Some(l) => PenaltyChoice::Fixed(l),
        None => PenaltyChoice::CrossValidated {
            grid: lambda_grid(a.lambda_grid.as_deref(), file.lambda_grid.as_ref())?,
            folds: a.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS),
        },
    };
    config.seed = args::seed(a.seed, file.seed)?;
    config.y0 = a.y0.or(file.y0).unwrap_or(0.0);
    config.validate()?;

    let rows = match a.jobs.or(file.jobs) {
        Some(0) => return Err(Failure::usage("--jobs must be >= 1")),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))?
            .install(|| chain::run_benchmark(&config))?,
        None => chain::run_benchmark(&config)?,
    };
    let summary = chain::summarize(&rows);

    let format = a.format.or(file.format).unwrap_or(Format::Csv);
    let (rows_text, summary_text, ext) = match format {
        Format::Csv => (io::rows_csv(&rows), io::summary_csv(&summary), "csv"),
        Format::Json => (io::rows_json(&rows), io::summary_json(&summary), "json"),
    };
    let out = a.out.clone().or(file.out.clone());
    io::write_output(out.as_deref(), &rows_text)?;
    let summary_out = a.summary.clone().or(file.summary.clone()).or_else(|| out.as_deref().map(|o| summary_path(o, ext)));
    if let Some(p) = summary_out {
        io::write_output(Some(&p), &summary_text)?;
    }
    if let Some(p) = a.svg.clone().or(file.svg.clone()) {
        let chart = svg::render(&summary, &config.methods, &config.k_values, &config.n_values);
        io::write_output(Some(&p), &chart)?;
    }
    Ok(())
}

fn check(a: CheckArgs, file: &FileConfig) -> Result<u8, Failure> {
    let only = match (&a.only, &file.only) {
        (Some(s), _) => Some(args::parse_list::<String>(s, "suite")?),
        (None, Some(v)) => Some(v.to_vec()),
        (None, None) => None,
    };
    let config = CheckConfig { seed: args::seed(a.seed, file.seed)?, only, corrupt_gradient: a.corrupt_gradient };
    let outcomes = checks::run_checks(&config)?;
    let text = match a.format.or(file.format) {
        Some(Format::Json) => format!("{}\n", serde_json::to_string_pretty(&outcomes).expect("serialisable")),
        _ => {
            use std::fmt::Write as _;
            let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(5).max(5);
            let mut t = format!("{:<width$}  {:<6}  {:>8}  detail\n", "check", "result", "time");
            for o in &outcomes {
                let status = if o.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(t, "{:<width$}  {:<6}  {:>7.2}s  {}", o.name, status, o.seconds, o.detail);
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            let _ = writeln!(t, "{} of {} checks passed (seed {})", outcomes.len() - failed, outcomes.len(), config.seed);
            t
        }
    };
    io::print_stdout(&text);
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 1 })
}
