//! Exact simulation of Markov chains with an unnormalised transition density,
//! and the estimation benchmark comparing ML with the logistic variants.

use std::time::Instant;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::kernel::Kernel;
use crate::model::{uniform_reference, Domain, EnergyModel, ParamVector, SampleSet, ToyChain};
use crate::ncd::{
    build_dataset, default_lambda_grid, fit_ncd_ignore, fit_ncd_param, fit_ncd_semi, select_lambda, DEFAULT_FOLDS,
};
use crate::quadrature::{fit_ml, gauss_legendre, DEFAULT_NODES};
use crate::rng::stream;

/// Target accuracy of the inverted CDF.
pub const CDF_TOLERANCE: f64 = 1e-8;

const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Inverse-CDF sampler over a uniform grid of panels on the domain.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    edges: Vec<f64>,
}

/// Unnormalised CDF of one conditional, tabulated at the panel edges.
struct PanelCdf {
    /// Energy offset subtracted before exponentiating.
    shift: f64,
    /// `cum[j]` is the mass of panels `0..j`.
    cum: Vec<f64>,
}

impl ChainSampler {
    /// `nodes` grid points, i.e. `nodes - 1` panels.
    pub fn new(domain: Domain, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::invalid("sampler grid needs at least two nodes"));
        }
        let h = domain.width() / (nodes - 1) as f64;
        let mut edges: Vec<f64> = (0..nodes).map(|i| domain.lower() + h * i as f64).collect();
        edges[nodes - 1] = domain.upper();
        Ok(ChainSampler { edges })
    }

    pub fn domain(&self) -> Domain {
        Domain::new(self.edges[0], self.edges[self.edges.len() - 1]).expect("valid edges")
    }

    fn panel_mass(model: &dyn EnergyModel, theta: &[f64], prev: f64, a: f64, b: f64, shift: f64) -> Result<f64> {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut s = 0.0;
        for (x, w) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
            s += w * (model.energy(theta, mid + half * x, prev)? - shift).exp();
        }
        Ok(half * s)
    }

    fn cdf(&self, model: &dyn EnergyModel, theta: &[f64], prev: f64) -> Result<PanelCdf> {
        let panels = self.edges.len() - 1;
        let mut energies = Vec::with_capacity(panels * 3);
        for j in 0..panels {
            let (a, b) = (self.edges[j], self.edges[j + 1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for x in GL3_NODES {
                energies.push(model.energy(theta, mid + half * x, prev)?);
            }
        }
        let shift = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::numerical("energy is not finite on the sampler grid"));
        }
        let mut cum = Vec::with_capacity(panels + 1);
        cum.push(0.0);
        for j in 0..panels {
            let half = 0.5 * (self.edges[j + 1] - self.edges[j]);
            let m: f64 = (0..3).map(|i| GL3_WEIGHTS[i] * (energies[3 * j + i] - shift).exp()).sum::<f64>() * half;
            cum.push(cum[j] + m);
        }
        Ok(PanelCdf { shift, cum })
    }

    fn invert(
        &self,
        model: &dyn EnergyModel,
        theta: &[f64],
        prev: f64,
        cdf: &PanelCdf,
        u: f64,
    ) -> Result<f64> {
        let total = cdf.cum[cdf.cum.len() - 1];
        let target = u * total;
        let j = (cdf.cum.partition_point(|&c| c < target).max(1) - 1).min(self.edges.len() - 2);
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let rest = target - cdf.cum[j];
        let mass = cdf.cum[j + 1] - cdf.cum[j];
        if mass <= 0.0 {
            return Ok(a);
        }
        let (mut lo, mut hi) = (a, b);
        let mut y = a + (b - a) * (rest / mass).clamp(0.0, 1.0);
        for _ in 0..100 {
            let g = Self::panel_mass(model, theta, prev, a, y, cdf.shift)? - rest;
            if g.abs() <= CDF_TOLERANCE * total {
                return Ok(y);
            }
            if g > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let dens = (model.energy(theta, y, prev)? - cdf.shift).exp();
            let newton = y - g / dens;
            y = if dens > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * (1.0 + y.abs()) {
                return Ok(y);
            }
        }
        Ok(y)
    }

    /// Chain `y_1..y_n` started from `y0`.
    pub fn sample_chain(
        &self,
        model: &dyn EnergyModel,
        theta: &ParamVector,
        n: usize,
        y0: f64,
        rng: &mut dyn RngCore,
    ) -> Result<SampleSet> {
        crate::model::check_theta_len(model, theta)?;
        let domain = model.domain();
        domain.check(y0)?;
        if n == 0 {
            return Err(Error::invalid("chain length must be >= 1"));
        }
        let cached = if model.depends_on_prev() { None } else { Some(self.cdf(model, theta, y0)?) };
        let mut points = Vec::with_capacity(n);
        let mut prev = y0;
        for _ in 0..n {
            let u: f64 = rng.random();
            let y = match &cached {
                Some(cdf) => self.invert(model, theta, prev, cdf, u)?,
                None => {
                    let cdf = self.cdf(model, theta, prev)?;
                    self.invert(model, theta, prev, &cdf, u)?
                }
            };
            let y = y.clamp(domain.lower(), domain.upper());
            points.push(y);
            prev = y;
        }
        SampleSet::new(domain, y0, points)
    }
}

/// Samples a chain with the default grid of [`DEFAULT_NODES`] points.
pub fn sample_chain(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    n: usize,
    y0: f64,
    rng: &mut dyn RngCore,
) -> Result<SampleSet> {
    ChainSampler::new(model.domain(), DEFAULT_NODES)?.sample_chain(model, theta, n, y0, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ml,
    NcdParam,
    NcdSemi,
    NcdIgnore,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ml, Method::NcdParam, Method::NcdSemi, Method::NcdIgnore];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::NcdParam => "ncd-param",
            Method::NcdSemi => "ncd-semi",
            Method::NcdIgnore => "ncd-ignore",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| Error::invalid(format!("unknown benchmark method '{s}'")))
    }
}

/// How the semi-parametric variant picks its penalty.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyChoice {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize },
}

impl Default for PenaltyChoice {
    fn default() -> Self {
        PenaltyChoice::CrossValidated { grid: default_lambda_grid(), folds: DEFAULT_FOLDS }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub repetitions: usize,
    pub theta1_range: (f64, f64),
    pub theta2_range: (f64, f64),
    /// Use this parameter in every repetition instead of drawing one.
    pub fixed_theta: Option<[f64; 2]>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub y0: f64,
    pub penalty: PenaltyChoice,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_values: vec![500, 2000],
            k_values: vec![10, 30],
            repetitions: 100,
            theta1_range: (-1.0, 1.0),
            theta2_range: (0.1, 10.0),
            fixed_theta: None,
            methods: Method::ALL.to_vec(),
            seed: crate::rng::DEFAULT_SEED,
            y0: 0.0,
            penalty: PenaltyChoice::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::invalid("n values must be non-empty and >= 1"));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::invalid("k values must be non-empty and >= 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        for (lo, hi) in [self.theta1_range, self.theta2_range] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid("parameter ranges must be finite with lo <= hi"));
            }
        }
        if !(-1.0..=1.0).contains(&self.y0) {
            return Err(Error::invalid("y0 must lie in [-1, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub n: usize,
    pub k: usize,
    pub rep: usize,
    pub theta_true: [f64; 2],
    /// `None` when the fit failed.
    pub theta_hat: Option<[f64; 2]>,
    pub wall_time_ms: f64,
    pub failure: Option<String>,
}

impl BenchmarkRow {
    pub fn error(&self) -> Option<[f64; 2]> {
        self.theta_hat.map(|h| [h[0] - self.theta_true[0], h[1] - self.theta_true[1]])
    }
}

#[allow(clippy::too_many_arguments)]
fn row_from<T>(
    method: Method,
    n: usize,
    k: usize,
    rep: usize,
    theta_true: [f64; 2],
    ms: f64,
    fit: Result<(T, bool)>,
    theta: impl Fn(&T) -> &ParamVector,
) -> BenchmarkRow {
    let (theta_hat, failure) = match fit {
        Ok((f, true)) => {
            let t = theta(&f);
            if t.iter().all(|v| v.is_finite()) {
                (Some([t[0], t[1]]), None)
            } else {
                (None, Some("non-finite estimate".to_string()))
            }
        }
        Ok((_, false)) => (None, Some("did not converge".to_string())),
        Err(e) => (None, Some(e.to_string())),
    };
    BenchmarkRow { method, n, k, rep, theta_true, theta_hat, wall_time_ms: ms, failure }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// True parameter of repetition `rep`.
pub fn draw_theta(config: &BenchmarkConfig, rep: usize) -> [f64; 2] {
    if let Some(t) = config.fixed_theta {
        return t;
    }
    let mut rng = stream(config.seed, &[rep as u64, 0]);
    let (a1, b1) = config.theta1_range;
    let (a2, b2) = config.theta2_range;
    [a1 + (b1 - a1) * rng.random::<f64>(), a2 + (b2 - a2) * rng.random::<f64>()]
}

fn run_repetition(config: &BenchmarkConfig, rep: usize) -> Vec<BenchmarkRow> {
    let model = ToyChain;
    let theta_true = draw_theta(config, rep);
    let theta = ParamVector::new(theta_true.to_vec()).expect("finite draw");
    let n_max = *config.n_values.iter().max().expect("validated");
    let mut rows = Vec::new();
    let chain = sample_chain(&model, &theta, n_max, config.y0, &mut stream(config.seed, &[rep as u64, 1]));
    let chain = match chain {
        Ok(c) => c,
        Err(e) => {
            for &n in &config.n_values {
                for &k in &config.k_values {
                    for &m in &config.methods {
                        rows.push(row_from::<ParamVector>(m, n, k, rep, theta_true, 0.0, Err(e.clone()), |t| t));
                    }
                }
            }
            return rows;
        }
    };
    let rule = gauss_legendre(DEFAULT_NODES, model.domain()).expect("static rule");
    let q = uniform_reference(model.domain());
    let opts = FitOptions::default();
    for &n in &config.n_values {
        let sample = SampleSet::new(model.domain(), config.y0, chain.points()[..n].to_vec()).expect("valid prefix");
        let ml = if config.methods.contains(&Method::Ml) {
            let start = Instant::now();
            let fit = fit_ml(&model, &sample, &rule, &opts).map(|f| {
                let c = f.converged;
                (f, c)
            });
            Some((fit, elapsed_ms(start)))
        } else {
            None
        };
        for &k in &config.k_values {
            let data = build_dataset(&sample, &q, k, &mut stream(config.seed, &[rep as u64, 2, n as u64, k as u64]));
            for &method in &config.methods {
                let row = match method {
                    Method::Ml => {
                        let (fit, ms) = ml.as_ref().expect("computed above");
                        row_from(method, n, k, rep, theta_true, *ms, fit.clone(), |f| &f.theta_hat)
                    }
                    _ => {
                        let start = Instant::now();
                        let fit = data.as_ref().map_err(Clone::clone).and_then(|d| match method {
                            Method::NcdParam => fit_ncd_param(&model, d, &opts),
                            Method::NcdIgnore => fit_ncd_ignore(&model, d, &opts),
                            Method::NcdSemi => {
                                let kernel = Kernel::from_median(&d.ancestors())?;
                                let lambda = match &config.penalty {
                                    PenaltyChoice::Fixed(l) => *l,
                                    PenaltyChoice::CrossValidated { grid, folds } => {
                                        let mut cv_rng = stream(config.seed, &[rep as u64, 3, n as u64, k as u64]);
                                        select_lambda(&model, d, kernel, grid, *folds, &opts, &mut cv_rng)?
                                    }
                                };
                                fit_ncd_semi(&model, d, kernel, lambda, &opts)
                            }
                            Method::Ml => unreachable!(),
                        });
                        let fit = fit.map(|f| {
                            let c = f.converged;
                            (f, c)
                        });
                        row_from(method, n, k, rep, theta_true, elapsed_ms(start), fit, |f| &f.theta_hat)
                    }
                };
                rows.push(row);
            }
        }
    }
    rows
}

/// Runs every repetition (in parallel on the current rayon pool) and
/// returns the rows ordered by repetition, then `n`, `k` and method.
///
/// Repetition `r` uses only streams derived from `(seed, r)`, so the rows do
/// not depend on scheduling. Failed fits are recorded, never fatal.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    config.validate()?;
    let per_rep: Vec<Vec<BenchmarkRow>> =
        (0..config.repetitions).into_par_iter().map(|rep| run_repetition(config, rep)).collect();
    Ok(per_rep.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub k: usize,
    /// Successful rows.
    pub count: usize,
    pub failures: usize,
    pub bias: [f64; 2],
    pub rmse: [f64; 2],
    /// Monte Carlo standard error of the bias.
    pub bias_se: [f64; 2],
}

/// Bias, RMSE and failure counts per `(method, n, k)`, sorted by that key.
/// Groups without a successful row are omitted.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    // Successful errors and the failure count of each cell.
    type Cell = (Vec<[f64; 2]>, usize);
    let mut groups: BTreeMap<(Method, usize, usize), Cell> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry((r.method, r.n, r.k)).or_default();
        match r.error() {
            Some(e) => entry.0.push(e),
            None => entry.1 += 1,
        }
    }
    groups
        .into_iter()
        .filter(|(_, (errs, _))| !errs.is_empty())
        .map(|((method, n, k), (errs, failures))| {
            let c = errs.len() as f64;
            let mut bias = [0.0; 2];
            let mut rmse = [0.0; 2];
            let mut bias_se = [0.0; 2];
            for i in 0..2 {
                let mean = errs.iter().map(|e| e[i]).sum::<f64>() / c;
                let ms = errs.iter().map(|e| e[i] * e[i]).sum::<f64>() / c;
                bias[i] = mean;
                rmse[i] = ms.sqrt();
                bias_se[i] = if errs.len() > 1 {
                    let var = errs.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / (c - 1.0);
                    (var / c).sqrt()
                } else {
                    f64::NAN
                };
            }
            SummaryRow { method, n, k, count: errs.len(), failures, bias, rmse, bias_se }
        })
        .collect()
}
