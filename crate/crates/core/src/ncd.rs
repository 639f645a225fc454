//! Noise-contrastive logistic regression.
//!
//! Every data pair `(y_t, y_{t-1})` is a positive example and `k` draws
//! `r ~ q(. | y_{t-1})` are negatives. The log-odds of a point `u` with
//! ancestor `u_prev` is
//!
//! ```text
//! f_theta(u | u_prev) + c(u_prev) - log q(u | u_prev) + log(n/m)
//! ```
//!
//! and the four variants differ only in `c`:
//!
//! * `Iid`: one intercept `nu` (the data are independent),
//! * `Param`: one free `nu_t` per ancestor,
//! * `Semi`: `nu + chi(u_prev)` with `chi` in a Gaussian RKHS, penalised,
//! * `Ignore`: one intercept on chain data, a deliberate misspecification.
//!
//! The offset `log(n/m) - log q` is carried per point. All variants require
//! a model with sufficient statistics, so the predictor is linear in the
//! coefficients and the logistic likelihood is concave.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{ascent_direction, newton_maximize_with, FitOptions, FitResult, NuEstimate};
use crate::kernel::{Kernel, KernelExpansion, RepresenterBasis};
use crate::model::{check_theta_len, EnergyModel, ParamVector, ReferenceDensity, SampleSet};

/// Logistic probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-12;

/// Negatives per ancestor used when none is given.
pub const DEFAULT_K: usize = 20;

pub const DEFAULT_FOLDS: usize = 5;

/// Gradient tolerance for the per-ancestor variant.
pub const PARAM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabeledPoint {
    pub u: f64,
    pub u_prev: f64,
    /// `true` for data points, `false` for reference draws.
    pub z: bool,
    pub log_q: f64,
    pub ancestor_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcdDataset {
    points: Vec<LabeledPoint>,
    n: usize,
    k: usize,
    /// `log(n/m)`; kept separate so a shift of `log q` can be compensated.
    log_ratio: f64,
}

impl NcdDataset {
    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.n * self.k
    }

    pub fn log_ratio(&self) -> f64 {
        self.log_ratio
    }

    /// Per-point offset `log(n/m) - log q(u | u_prev)`.
    pub fn offset(&self, p: &LabeledPoint) -> f64 {
        self.log_ratio - p.log_q
    }

    /// Ancestor value for each ancestor index.
    pub fn ancestors(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for p in self.points.iter().filter(|p| p.z) {
            out[p.ancestor_index] = p.u_prev;
        }
        out
    }

    /// Adds `c` to every `log q` and to `log(n/m)`; the offsets are unchanged.
    pub fn shift_reference(&self, c: f64) -> NcdDataset {
        let mut out = self.clone();
        for p in &mut out.points {
            p.log_q += c;
        }
        out.log_ratio += c;
        out
    }

    /// The points of the listed ancestors, re-indexed in the given order.
    fn subset(&self, ancestors: &[usize]) -> NcdDataset {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in ancestors.iter().enumerate() {
            map[old] = new;
        }
        let mut points: Vec<LabeledPoint> = self
            .points
            .iter()
            .filter(|p| map[p.ancestor_index] != usize::MAX)
            .map(|p| LabeledPoint { ancestor_index: map[p.ancestor_index], ..*p })
            .collect();
        points.sort_by_key(|p| p.ancestor_index);
        NcdDataset { points, n: ancestors.len(), k: self.k, log_ratio: self.log_ratio }
    }
}

/// One positive and `k` reference draws per transition of `sample`.
pub fn build_dataset(
    sample: &SampleSet,
    q: &dyn ReferenceDensity,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<NcdDataset> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let n = sample.len();
    let domain = q.domain();
    let mut points = Vec::with_capacity(n * (k + 1));
    for (t, (prev, y)) in sample.transitions().enumerate() {
        points.push(LabeledPoint { u: y, u_prev: prev, z: true, log_q: q.log_density(y, prev), ancestor_index: t });
        for _ in 0..k {
            let r = q.sample(prev, rng);
            domain.check(r)?;
            points.push(LabeledPoint { u: r, u_prev: prev, z: false, log_q: q.log_density(r, prev), ancestor_index: t });
        }
    }
    if points.iter().any(|p| !p.log_q.is_finite()) {
        return Err(Error::numerical("reference density vanishes at a data or reference point"));
    }
    Ok(NcdDataset { points, n, k, log_ratio: -(k as f64).ln() })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamped log-probability of label `z` under log-odds `eta`.
fn log_prob(z: bool, eta: f64) -> f64 {
    let lp = if z { -softplus(-eta) } else { -softplus(eta) };
    lp.clamp(P_CLAMP.ln(), (-P_CLAMP).ln_1p())
}

/// Logistic log-likelihood `R^m(theta, nu)` with a single `nu`.
pub fn ncd_objective(model: &dyn EnergyModel, theta: &ParamVector, nu: f64, data: &NcdDataset) -> Result<f64> {
    check_theta_len(model, theta)?;
    let mut total = 0.0;
    for p in &data.points {
        let eta = model.energy(theta, p.u, p.u_prev)? + nu + data.offset(p);
        total += log_prob(p.z, eta);
    }
    Ok(total)
}

/// Gradient of [`ncd_objective`] over `(theta, nu)`, ignoring the clamp.
pub fn ncd_grad(model: &dyn EnergyModel, theta: &ParamVector, nu: f64, data: &NcdDataset) -> Result<DVector<f64>> {
    check_theta_len(model, theta)?;
    let d = model.dim();
    let mut grad = DVector::zeros(d + 1);
    let mut g = vec![0.0; d];
    for p in &data.points {
        let eta = model.energy(theta, p.u, p.u_prev)? + nu + data.offset(p);
        let r = if p.z { 1.0 - sigmoid(eta) } else { -sigmoid(eta) };
        model.grad_into(theta, p.u, p.u_prev, &mut g)?;
        for i in 0..d {
            grad[i] += r * g[i];
        }
        grad[d] += r;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NcdVariant {
    Iid,
    Param,
    Semi,
    Ignore,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    pub variant: NcdVariant,
    pub theta_hat: ParamVector,
    /// Global intercept; absent for the per-ancestor variant.
    pub nu: Option<f64>,
    pub nu_vec: Option<Vec<f64>>,
    pub chi: Option<KernelExpansion>,
    pub lambda: Option<f64>,
    /// `-2` times the (unpenalised) logistic log-likelihood.
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl LogisticFit {
    /// Fitted log-normaliser `c(u_prev)` where the variant defines one as a function.
    pub fn log_normaliser(&self, u_prev: f64) -> Option<f64> {
        let nu = self.nu?;
        Some(nu + self.chi.as_ref().map_or(0.0, |c| c.eval(u_prev)))
    }

    /// Deviance of the fitted log-odds on another dataset.
    pub fn deviance_on(&self, model: &dyn EnergyModel, data: &NcdDataset) -> Result<f64> {
        if self.variant == NcdVariant::Param {
            return Err(Error::invalid("per-ancestor fits cannot score unseen ancestors"));
        }
        let mut total = 0.0;
        for p in &data.points {
            let c = self.log_normaliser(p.u_prev).unwrap_or(0.0);
            let eta = model.energy(&self.theta_hat, p.u, p.u_prev)? + c + data.offset(p);
            total += log_prob(p.z, eta);
        }
        Ok(-2.0 * total)
    }

    pub fn to_fit_result(&self) -> FitResult {
        let nu_hat = match (&self.nu, &self.nu_vec, &self.chi) {
            (Some(nu), _, Some(chi)) => NuEstimate::Semi { intercept: *nu, chi: chi.clone() },
            (Some(nu), _, None) => NuEstimate::Scalar(*nu),
            (None, Some(v), _) => NuEstimate::Vector(v.clone()),
            _ => NuEstimate::None,
        };
        FitResult {
            theta_hat: self.theta_hat.clone(),
            nu_hat,
            covariance: None,
            objective: -0.5 * self.deviance,
            iterations: self.iterations,
            converged: self.converged,
            diagnostics: self.flags.clone(),
        }
    }
}

enum Groups {
    None,
    PerAncestor,
    /// Ancestor features (`n x r`) and the ridge weight on their coefficients.
    Basis { features: DMatrix<f64>, lambda: f64 },
}

/// Negative-semidefinite curvature of the logistic objective.
enum Curvature {
    Dense(DMatrix<f64>),
    /// `[[a, b], [b^T, diag]]` with a diagonal ancestor block.
    Arrow { a: DMatrix<f64>, b: DMatrix<f64>, diag: DVector<f64> },
}

struct Problem<'a> {
    data: &'a NcdDataset,
    /// Row-major sufficient statistics, one row of length `d` per point.
    stats: Vec<f64>,
    d: usize,
    intercept: bool,
    groups: Groups,
}

impl<'a> Problem<'a> {
    fn new(model: &dyn EnergyModel, data: &'a NcdDataset, intercept: bool, groups: Groups) -> Result<Self> {
        if !model.has_suff_stats() {
            return Err(Error::MissingSufficientStatistics);
        }
        let d = model.dim();
        let mut stats = vec![0.0; data.points.len() * d];
        for (p, row) in data.points.iter().zip(stats.chunks_mut(d)) {
            model.suff_stats_into(p.u, p.u_prev, row)?;
        }
        Ok(Problem { data, stats, d, intercept, groups })
    }

    fn own_dim(&self) -> usize {
        self.d + self.intercept as usize
    }

    fn group_dim(&self) -> usize {
        match &self.groups {
            Groups::None => 0,
            Groups::PerAncestor => self.data.n,
            Groups::Basis { features, .. } => features.ncols(),
        }
    }

    fn dim(&self) -> usize {
        self.own_dim() + self.group_dim()
    }

    /// Ancestor contributions `c_t` to the log-odds.
    fn group_values(&self, beta: &DVector<f64>) -> DVector<f64> {
        let p = self.own_dim();
        match &self.groups {
            Groups::None => DVector::zeros(self.data.n),
            Groups::PerAncestor => beta.rows(p, self.data.n).into_owned(),
            Groups::Basis { features, .. } => features * beta.rows(p, features.ncols()),
        }
    }

    fn eta(&self, beta: &DVector<f64>, i: usize, gv: &DVector<f64>) -> f64 {
        let pt = &self.data.points[i];
        let s = &self.stats[i * self.d..(i + 1) * self.d];
        let mut eta = s.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
        if self.intercept {
            eta += beta[self.d];
        }
        eta + gv[pt.ancestor_index] + self.data.offset(pt)
    }

    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        match &self.groups {
            Groups::Basis { lambda, features } => lambda * beta.rows(self.own_dim(), features.ncols()).norm_squared(),
            _ => 0.0,
        }
    }

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let gv = self.group_values(beta);
        (0..self.data.points.len()).map(|i| log_prob(self.data.points[i].z, self.eta(beta, i, &gv))).sum()
    }

    fn value(&self, beta: &DVector<f64>) -> Result<f64> {
        Ok(self.loglik(beta) - self.penalty(beta))
    }

    fn derivs(&self, beta: &DVector<f64>) -> Result<(f64, DVector<f64>, Curvature)> {
        let p = self.own_dim();
        let n = self.data.n;
        let gv = self.group_values(beta);
        let mut value = 0.0;
        let mut grad_o = DVector::zeros(p);
        let mut a = DMatrix::zeros(p, p);
        let mut rsum = DVector::zeros(n);
        let mut wsum = DVector::zeros(n);
        let mut wx = DMatrix::zeros(p, n);
        let mut x = DVector::zeros(p);
        for (i, pt) in self.data.points.iter().enumerate() {
            let eta = self.eta(beta, i, &gv);
            value += log_prob(pt.z, eta);
            let prob = sigmoid(eta);
            let r = if pt.z { 1.0 - prob } else { -prob };
            let w = prob * (1.0 - prob);
            x.rows_mut(0, self.d).copy_from_slice(&self.stats[i * self.d..(i + 1) * self.d]);
            if self.intercept {
                x[self.d] = 1.0;
            }
            grad_o.axpy(r, &x, 1.0);
            a.ger(-w, &x, &x, 1.0);
            let t = pt.ancestor_index;
            rsum[t] += r;
            wsum[t] += w;
            let mut col = wx.column_mut(t);
            col.axpy(w, &x, 1.0);
        }
        let dim = self.dim();
        let mut grad = DVector::zeros(dim);
        grad.rows_mut(0, p).copy_from(&grad_o);
        let curv = match &self.groups {
            Groups::None => Curvature::Dense(a),
            Groups::PerAncestor => {
                grad.rows_mut(p, n).copy_from(&rsum);
                Curvature::Arrow { a, b: -wx, diag: -wsum }
            }
            Groups::Basis { features, lambda } => {
                let r = features.ncols();
                let bg = beta.rows(p, r);
                value -= lambda * bg.norm_squared();
                let gg = features.transpose() * &rsum - 2.0 * lambda * bg;
                grad.rows_mut(p, r).copy_from(&gg);
                let mut h = DMatrix::zeros(dim, dim);
                h.view_mut((0, 0), (p, p)).copy_from(&a);
                let hog = -(&wx * features);
                h.view_mut((0, p), (p, r)).copy_from(&hog);
                h.view_mut((p, 0), (r, p)).copy_from(&hog.transpose());
                let mut scaled = features.clone();
                for (t, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= wsum[t];
                }
                let mut hgg = -(features.transpose() * scaled);
                for j in 0..r {
                    hgg[(j, j)] -= 2.0 * lambda;
                }
                h.view_mut((p, p), (r, r)).copy_from(&hgg);
                Curvature::Dense(h)
            }
        };
        Ok((value, grad, curv))
    }
}

fn solve_curvature(g: &DVector<f64>, curv: &Curvature) -> Option<DVector<f64>> {
    match curv {
        Curvature::Dense(h) => ascent_direction(g, h),
        Curvature::Arrow { a, b, diag } => {
            // Eliminate the diagonal block: (-H) step = g.
            let p = a.nrows();
            let n = diag.len();
            let dpos = diag.map(|v| (-v).max(1e-12));
            let g_o = g.rows(0, p);
            let g_g = g.rows(p, n);
            let mut bd = b.clone();
            for (t, mut col) in bd.column_iter_mut().enumerate() {
                col /= dpos[t];
            }
            // -H = [[-a, -b], [-b^T, D]]; Schur complement of D.
            let schur = -a - &bd * b.transpose();
            let rhs = g_o + &bd * g_g;
            let step_o = ascent_direction(&rhs, &(-schur))?;
            let bt_step = b.transpose() * &step_o;
            let mut out = DVector::zeros(p + n);
            out.rows_mut(0, p).copy_from(&step_o);
            for t in 0..n {
                out[p + t] = (g_g[t] + bt_step[t]) / dpos[t];
            }
            Some(out)
        }
    }
}

struct Solved {
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
    note: Option<String>,
    curv: Curvature,
}

fn solve(problem: &Problem<'_>, x0: DVector<f64>, tol: f64, max_iter: usize) -> Result<Solved> {
    let out = newton_maximize_with(
        x0,
        |b| problem.value(b),
        |b| problem.derivs(b),
        solve_curvature,
        tol,
        max_iter,
    )?;
    Ok(Solved { beta: out.x, iterations: out.iterations, converged: out.converged, note: out.note, curv: out.hess })
}

fn start(problem: &Problem<'_>, opts: &FitOptions) -> Result<DVector<f64>> {
    let mut x0 = DVector::zeros(problem.dim());
    x0.rows_mut(0, problem.d).copy_from(&opts.start(problem.d)?);
    Ok(x0)
}

/// Flags for a finished solve: non-convergence and diverging coefficients.
fn solve_flags(s: &Solved) -> Vec<String> {
    let mut flags: Vec<String> = s.note.iter().cloned().collect();
    if !s.converged && s.beta.amax() > 1e4 {
        flags.push(format!("possible separation: coefficients reached {:.3e}", s.beta.amax()));
    }
    flags
}

fn theta_of(beta: &DVector<f64>, d: usize) -> Result<ParamVector> {
    ParamVector::new(beta.rows(0, d).iter().copied().collect())
        .map_err(|_| Error::numerical("fitted coefficients are not finite"))
}

fn fit_single_intercept(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    opts: &FitOptions,
    variant: NcdVariant,
) -> Result<LogisticFit> {
    let problem = Problem::new(model, data, true, Groups::None)?;
    let s = solve(&problem, start(&problem, opts)?, opts.tol, opts.max_iter)?;
    let d = problem.d;
    Ok(LogisticFit {
        variant,
        theta_hat: theta_of(&s.beta, d)?,
        nu: Some(s.beta[d]),
        nu_vec: None,
        chi: None,
        lambda: None,
        deviance: -2.0 * problem.loglik(&s.beta),
        iterations: s.iterations,
        converged: s.converged,
        flags: solve_flags(&s),
    })
}

/// Shared `theta` and one intercept `nu` (independent data).
pub fn fit_ncd_iid(model: &dyn EnergyModel, data: &NcdDataset, opts: &FitOptions) -> Result<LogisticFit> {
    fit_single_intercept(model, data, opts, NcdVariant::Iid)
}

/// Shared `theta` and one global intercept on chain data, ignoring the
/// dependence of the normaliser on the ancestor.
pub fn fit_ncd_ignore(model: &dyn EnergyModel, data: &NcdDataset, opts: &FitOptions) -> Result<LogisticFit> {
    fit_single_intercept(model, data, opts, NcdVariant::Ignore)
}

/// Shared `theta` and a free intercept `nu_t` per ancestor.
///
/// Solved by joint Newton steps in which the diagonal ancestor block is
/// eliminated, so each step costs `O(n d^2)`.
pub fn fit_ncd_param(model: &dyn EnergyModel, data: &NcdDataset, opts: &FitOptions) -> Result<LogisticFit> {
    let problem = Problem::new(model, data, false, Groups::PerAncestor)?;
    let s = solve(&problem, start(&problem, opts)?, opts.tol.max(PARAM_TOL), opts.max_iter)?;
    let d = problem.d;
    let mut flags = solve_flags(&s);
    if let Curvature::Arrow { diag, .. } = &s.curv {
        let weak: Vec<usize> = (0..data.n).filter(|&t| -diag[t] < 1e-10).collect();
        if !weak.is_empty() {
            flags.push(format!("{} ancestor intercept(s) unidentifiable, first at index {}", weak.len(), weak[0]));
        }
    }
    Ok(LogisticFit {
        variant: NcdVariant::Param,
        theta_hat: theta_of(&s.beta, d)?,
        nu: None,
        nu_vec: Some(s.beta.rows(d, data.n).iter().copied().collect()),
        chi: None,
        lambda: None,
        deviance: -2.0 * problem.loglik(&s.beta),
        iterations: s.iterations,
        converged: s.converged,
        flags,
    })
}

fn unique_sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

struct SemiSetup {
    basis: RepresenterBasis,
    features: DMatrix<f64>,
}

fn semi_setup(data: &NcdDataset, kernel: Kernel) -> Result<SemiSetup> {
    let ancestors = data.ancestors();
    let basis = RepresenterBasis::new(kernel, unique_sorted(&ancestors))?;
    let r = basis.rank();
    let mut features = DMatrix::zeros(data.n, r);
    for (t, &a) in ancestors.iter().enumerate() {
        features.row_mut(t).copy_from(&basis.features(a).transpose());
    }
    Ok(SemiSetup { basis, features })
}

fn fit_semi_with(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    setup: &SemiSetup,
    lambda: f64,
    x0: Option<DVector<f64>>,
    opts: &FitOptions,
) -> Result<(LogisticFit, DVector<f64>)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("penalty weight must be >= 0, got {lambda}")));
    }
    let problem = Problem::new(model, data, true, Groups::Basis { features: setup.features.clone(), lambda })?;
    let x0 = match x0 {
        Some(x) => x,
        None => start(&problem, opts)?,
    };
    let s = solve(&problem, x0, opts.tol, opts.max_iter)?;
    let d = problem.d;
    let r = setup.basis.rank();
    let chi = setup.basis.expansion(&s.beta.rows(d + 1, r).into_owned())?;
    let fit = LogisticFit {
        variant: NcdVariant::Semi,
        theta_hat: theta_of(&s.beta, d)?,
        nu: Some(s.beta[d]),
        nu_vec: None,
        chi: Some(chi),
        lambda: Some(lambda),
        deviance: -2.0 * problem.loglik(&s.beta),
        iterations: s.iterations,
        converged: s.converged,
        flags: solve_flags(&s),
    };
    Ok((fit, s.beta))
}

/// Shared `theta`, a global intercept and `chi(u_prev)` in the RKHS of
/// `kernel` centred at the unique ancestors, with penalty `lambda |chi|_H^2`.
pub fn fit_ncd_semi(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    kernel: Kernel,
    lambda: f64,
    opts: &FitOptions,
) -> Result<LogisticFit> {
    let setup = semi_setup(data, kernel)?;
    Ok(fit_semi_with(model, data, &setup, lambda, None, opts)?.0)
}

/// `count` values log-spaced over `[lo, hi]`, in decreasing order.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || count < 2 {
        return Err(Error::invalid("log grid needs 0 < lo < hi and at least two points"));
    }
    let (a, b) = (hi.ln(), lo.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// Eight values log-spaced over `[1e-6, 1e2]`, largest first.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-6, 1e2, 8).expect("static grid")
}

/// Held-out deviance of the semi-parametric fit for every grid value.
///
/// Folds are formed from whole ancestors, so a positive and its negatives
/// are never split. Returns `(lambda, deviance)` with `lambda` decreasing.
pub fn cross_validate(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    kernel: Kernel,
    grid: &[f64],
    folds: usize,
    opts: &FitOptions,
    rng: &mut dyn RngCore,
) -> Result<Vec<(f64, f64)>> {
    let (lambdas, per_fold) = fold_deviances(model, data, kernel, grid, folds, opts, rng)?;
    Ok(lambdas.into_iter().zip(per_fold.iter().map(|f| f.iter().sum())).collect())
}

/// Per-fold held-out deviance, indexed `[lambda][fold]`, lambdas decreasing.
fn fold_deviances(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    kernel: Kernel,
    grid: &[f64],
    folds: usize,
    opts: &FitOptions,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if grid.is_empty() {
        return Err(Error::invalid("penalty grid is empty"));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("penalty grid entries must be finite and >= 0"));
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    if data.n < 2 {
        return Err(Error::invalid("cross-validation needs at least two ancestors"));
    }
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();
    // Fewer ancestors than folds: every fold still gets one whole ancestor.
    let folds = folds.min(data.n);
    let mut order: Vec<usize> = (0..data.n).collect();
    order.shuffle(&mut RngAdapter(rng));
    let mut scores = vec![vec![0.0; folds]; lambdas.len()];
    for f in 0..folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, &t) in order.iter().enumerate() {
            if pos % folds == f { test.push(t) } else { train.push(t) }
        }
        train.sort_unstable();
        test.sort_unstable();
        let train_data = data.subset(&train);
        let test_data = data.subset(&test);
        let setup = semi_setup(&train_data, kernel)?;
        let mut warm = None;
        for (&lambda, row) in lambdas.iter().zip(scores.iter_mut()) {
            let (fit, beta) = fit_semi_with(model, &train_data, &setup, lambda, warm.take(), opts)?;
            row[f] = fit.deviance_on(model, &test_data)?;
            warm = Some(beta);
        }
    }
    Ok((lambdas, scores))
}

/// Penalty weight minimising the cross-validated deviance; ties go to the
/// larger weight, where a tie is a difference within one paired standard
/// error across folds.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    model: &dyn EnergyModel,
    data: &NcdDataset,
    kernel: Kernel,
    grid: &[f64],
    folds: usize,
    opts: &FitOptions,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if grid.len() == 1 {
        if !(grid[0].is_finite() && grid[0] >= 0.0) {
            return Err(Error::invalid("penalty grid entries must be finite and >= 0"));
        }
        return Ok(grid[0]);
    }
    let (lambdas, per_fold) = fold_deviances(model, data, kernel, grid, folds, opts, rng)?;
    let totals: Vec<f64> = per_fold.iter().map(|f| f.iter().sum()).collect();
    let best = (0..totals.len()).fold(0, |b, j| if totals[j] < totals[b] { j } else { b });
    // A larger penalty counts as tied with the minimum when its excess
    // deviance is within one standard error of the paired fold differences.
    let k = per_fold[best].len() as f64;
    let pick = (0..=best)
        .find(|&j| {
            let d: Vec<f64> = per_fold[j].iter().zip(&per_fold[best]).map(|(a, b)| a - b).collect();
            let excess: f64 = d.iter().sum();
            let m = excess / k;
            let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
            excess <= (k.sqrt() * sd).max(1e-10 * totals[best].abs().max(1.0))
        })
        .unwrap_or(best);
    Ok(lambdas[pick])
}

/// `&mut dyn RngCore` as a sized `RngCore` for APIs that need `R: Rng`.
struct RngAdapter<'a>(&'a mut dyn RngCore);

impl RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
