//! Poisson-transformed objectives.
//!
//! * `M(theta, nu)`: one free log-normaliser shared by all observations.
//! * `M(theta, nu_vec)`: one log-normaliser per ancestor.
//! * `M_chi(theta, chi)`: the per-ancestor normalisers given by a kernel
//!   expansion `chi`, with an RKHS penalty `lambda * |chi|_H^2`.
//!
//! Integrals are computed with the quadrature rule; `E_{theta,nu}` below
//! denotes the unnormalised operator `phi -> int phi exp{f + nu}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{newton_maximize, FitOptions, FitResult, NuEstimate};
use crate::kernel::{Kernel, KernelExpansion, RepresenterBasis};
use crate::model::{check_theta_len, EnergyModel, ParamVector, SampleSet};
use crate::quadrature::{
    ancestor_moments, conditional_moments, data_energy_sum, data_grad_sum, data_hessian_sum,
    log_partition_raw, Moments, QuadratureRule,
};

/// Penalty weight for `M_chi` and the grid walked by [`lambda_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda_pen: f64,
    pub grid: Vec<f64>,
}

impl PenaltyConfig {
    pub fn new(lambda_pen: f64, grid: Vec<f64>) -> Result<Self> {
        if !(lambda_pen.is_finite() && lambda_pen >= 0.0) {
            return Err(Error::invalid(format!("penalty weight must be >= 0, got {lambda_pen}")));
        }
        validate_grid(&grid)?;
        Ok(PenaltyConfig { lambda_pen, grid })
    }

    pub fn fixed(lambda_pen: f64) -> Result<Self> {
        Self::new(lambda_pen, vec![])
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::invalid("penalty grid entries must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("penalty grid must be strictly decreasing"));
    }
    Ok(())
}

/// `nu*(theta) = -log Z(theta | y_prev)`, the maximiser of `M` in `nu`.
pub fn nu_star(model: &dyn EnergyModel, theta: &ParamVector, y_prev: f64, rule: &QuadratureRule) -> Result<f64> {
    check_theta_len(model, theta)?;
    Ok(-log_partition_raw(model, theta, y_prev, rule)?)
}

fn m_value_raw(model: &dyn EnergyModel, theta: &[f64], nu: f64, sample: &SampleSet, rule: &QuadratureRule) -> Result<f64> {
    let n = sample.len() as f64;
    let lz = log_partition_raw(model, theta, sample.initial(), rule)?;
    Ok(data_energy_sum(model, theta, sample)? + n * nu - n * (nu + lz).exp())
}

/// `M(theta, nu) = sum_i {f(y_i) + nu} - n int exp{f(y) + nu} dy`.
///
/// The integral uses the sample's initial point as the (fixed) ancestor, so
/// this is the IID transform; chain models go through [`m_seq_objective`].
pub fn m_objective(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu: f64,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_theta_len(model, theta)?;
    m_value_raw(model, theta, nu, sample, rule)
}

fn m_derivs(
    model: &dyn EnergyModel,
    theta: &[f64],
    nu: f64,
    sample: &SampleSet,
    rule: &QuadratureRule,
    with_hessian: bool,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let d = model.dim();
    let n = sample.len() as f64;
    let mom = conditional_moments(model, theta, sample.initial(), rule, with_hessian)?;
    let mass = (nu + mom.log_z).exp();
    let value = data_energy_sum(model, theta, sample)? + n * nu - n * mass;
    let mut grad = DVector::zeros(d + 1);
    let gtheta = data_grad_sum(model, theta, sample)? - n * mass * &mom.mean;
    grad.rows_mut(0, d).copy_from(&gtheta);
    grad[d] = n - n * mass;
    let mut hess = DMatrix::zeros(0, 0);
    if with_hessian {
        hess = DMatrix::zeros(d + 1, d + 1);
        let htt = data_hessian_sum(model, theta, sample)? - n * mass * &mom.second;
        hess.view_mut((0, 0), (d, d)).copy_from(&htt);
        for a in 0..d {
            let cross = -n * mass * mom.mean[a];
            hess[(a, d)] = cross;
            hess[(d, a)] = cross;
        }
        hess[(d, d)] = -n * mass;
    }
    Ok((value, grad, hess))
}

/// Joint gradient of `M` over `(theta, nu)`.
pub fn m_grad(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu: f64,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    check_theta_len(model, theta)?;
    Ok(m_derivs(model, theta, nu, sample, rule, false)?.1)
}

/// Joint Hessian of `M` over `(theta, nu)`; `nu` is the last coordinate.
pub fn m_hessian(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu: f64,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    check_theta_len(model, theta)?;
    Ok(m_derivs(model, theta, nu, sample, rule, true)?.2)
}

fn split_theta(x: &DVector<f64>, d: usize) -> Result<ParamVector> {
    ParamVector::new(x.rows(0, d).iter().copied().collect())
        .map_err(|_| Error::numerical("fitted parameters are not finite"))
}

/// Joint Newton ascent on `M(theta, nu)` starting from `(theta_init, 0)`.
pub fn fit_poisson_joint(
    model: &dyn EnergyModel,
    sample: &SampleSet,
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<FitResult> {
    let d = model.dim();
    let mut x0 = DVector::zeros(d + 1);
    x0.rows_mut(0, d).copy_from(&opts.start(d)?);
    let out = newton_maximize(
        x0,
        |x| m_value_raw(model, &x.as_slice()[..d], x[d], sample, rule),
        |x| m_derivs(model, &x.as_slice()[..d], x[d], sample, rule, true),
        opts.tol,
        opts.max_iter,
    )?;
    let mut diagnostics: Vec<String> = out.note.into_iter().collect();
    let covariance = match confidence_from_m(&out.hess, d) {
        Ok(c) => Some(c),
        Err(e) => {
            diagnostics.push(format!("covariance omitted: {e}"));
            None
        }
    };
    Ok(FitResult {
        theta_hat: split_theta(&out.x, d)?,
        nu_hat: NuEstimate::Scalar(out.x[d]),
        covariance,
        objective: out.value,
        iterations: out.iterations,
        converged: out.converged,
        diagnostics,
    })
}

/// `M(theta, nu_vec) = sum_t {f(y_t | y_{t-1}) + nu_{t-1}} - int sum_t exp{f(y | y_{t-1}) + nu_{t-1}} dy`.
pub fn m_seq_objective(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu_vec: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_theta_len(model, theta)?;
    if nu_vec.len() != sample.len() {
        return Err(Error::LengthMismatch { expected: sample.len(), got: nu_vec.len() });
    }
    let moments = ancestor_moments_light(model, theta, sample, rule)?;
    let mut value = data_energy_sum(model, theta, sample)?;
    for (nu, lz) in nu_vec.iter().zip(&moments) {
        value += nu - (nu + lz).exp();
    }
    Ok(value)
}

fn ancestor_moments_light(
    model: &dyn EnergyModel,
    theta: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    if !model.depends_on_prev() {
        let lz = log_partition_raw(model, theta, sample.initial(), rule)?;
        return Ok(vec![lz; sample.len()]);
    }
    sample.ancestors().into_iter().map(|p| log_partition_raw(model, theta, p, rule)).collect()
}

/// Gradient of [`m_seq_objective`] over `(theta, nu_vec)`.
pub fn m_seq_grad(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu_vec: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    check_theta_len(model, theta)?;
    let n = sample.len();
    if nu_vec.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: nu_vec.len() });
    }
    let d = model.dim();
    let moments = ancestor_moments(model, theta, sample, rule, false)?;
    let mut grad = DVector::zeros(d + n);
    let mut gtheta = data_grad_sum(model, theta, sample)?;
    for (t, m) in moments.iter().enumerate() {
        let mass = (nu_vec[t] + m.log_z).exp();
        gtheta -= mass * &m.mean;
        grad[d + t] = 1.0 - mass;
    }
    grad.rows_mut(0, d).copy_from(&gtheta);
    Ok(grad)
}

/// Penalised semi-parametric objective
/// `M_chi(theta, chi) - lambda * alpha^T K alpha`, where the integral term is
/// `sum_t exp{chi(y_{t-1})} Z_t(theta)`.
pub fn m_chi_objective(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    chi: &KernelExpansion,
    pen: &PenaltyConfig,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_theta_len(model, theta)?;
    let lz = ancestor_moments_light(model, theta, sample, rule)?;
    let mut value = data_energy_sum(model, theta, sample)?;
    for (t, lz_t) in lz.iter().enumerate() {
        let v = chi.eval(sample.ancestor(t));
        value += v - (v + lz_t).exp();
    }
    let penalty = if pen.lambda_pen == 0.0 { 0.0 } else { pen.lambda_pen * chi.rkhs_norm_sq()? };
    Ok(value - penalty)
}

/// Gradient of [`m_chi_objective`] over `(theta, alpha)`.
pub fn m_chi_grad(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    chi: &KernelExpansion,
    pen: &PenaltyConfig,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    check_theta_len(model, theta)?;
    let d = model.dim();
    let c = chi.centers().len();
    let kernel = chi.kernel();
    let moments = ancestor_moments(model, theta, sample, rule, false)?;
    let mut gtheta = data_grad_sum(model, theta, sample)?;
    let mut galpha = DVector::zeros(c);
    for (t, m) in moments.iter().enumerate() {
        let anc = sample.ancestor(t);
        let v = chi.eval(anc);
        let mass = (v + m.log_z).exp();
        gtheta -= mass * &m.mean;
        for (j, &cj) in chi.centers().iter().enumerate() {
            galpha[j] += (1.0 - mass) * kernel.eval(anc, cj);
        }
    }
    if pen.lambda_pen != 0.0 {
        let k = kernel.gram(chi.centers());
        galpha -= 2.0 * pen.lambda_pen * (k * DVector::from_column_slice(chi.alpha()));
    }
    let mut grad = DVector::zeros(d + c);
    grad.rows_mut(0, d).copy_from(&gtheta);
    grad.rows_mut(d, c).copy_from(&galpha);
    Ok(grad)
}

/// `chi` parametrised by `beta` in a representer basis; `x = (theta, beta)`.
struct ChiProblem<'a> {
    model: &'a dyn EnergyModel,
    sample: &'a SampleSet,
    rule: &'a QuadratureRule,
    basis: &'a RepresenterBasis,
    lambda: f64,
}

impl ChiProblem<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn chi_at_centers(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.dim();
        self.basis.factor() * x.rows(d, self.basis.rank())
    }

    fn penalty(&self, x: &DVector<f64>) -> f64 {
        self.lambda * x.rows(self.dim(), self.basis.rank()).norm_squared()
    }

    /// Unpenalised `M_chi`.
    fn raw_value(&self, x: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        let theta = &x.as_slice()[..d];
        let v = self.chi_at_centers(x);
        let lz = ancestor_moments_light(self.model, theta, self.sample, self.rule)?;
        let mut value = data_energy_sum(self.model, theta, self.sample)?;
        for (t, lz_t) in lz.iter().enumerate() {
            value += v[t] - (v[t] + lz_t).exp();
        }
        Ok(value)
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.raw_value(x)? - self.penalty(x))
    }

    fn derivs(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let r = self.basis.rank();
        let theta = &x.as_slice()[..d];
        let l = self.basis.factor();
        let v = self.chi_at_centers(x);
        let moments: Vec<Moments> = ancestor_moments(self.model, theta, self.sample, self.rule, true)?;
        let mut value = data_energy_sum(self.model, theta, self.sample)?;
        let mut gtheta = data_grad_sum(self.model, theta, self.sample)?;
        let mut htt = data_hessian_sum(self.model, theta, self.sample)?;
        let n = self.sample.len();
        let mut resid = DVector::zeros(n);
        let mut mass = DVector::zeros(n);
        // Row t of `cross` is e_t * E_t[df]^T.
        let mut cross = DMatrix::zeros(n, d);
        for (t, m) in moments.iter().enumerate() {
            let e = (v[t] + m.log_z).exp();
            value += v[t] - e;
            gtheta -= e * &m.mean;
            htt -= e * &m.second;
            resid[t] = 1.0 - e;
            mass[t] = e;
            for a in 0..d {
                cross[(t, a)] = e * m.mean[a];
            }
        }
        let beta = x.rows(d, r);
        value -= self.lambda * beta.norm_squared();
        let gbeta = l.transpose() * &resid - 2.0 * self.lambda * beta;
        let mut weighted = l.clone();
        for t in 0..n {
            weighted.row_mut(t).scale_mut(mass[t]);
        }
        let mut hbb = -(l.transpose() * weighted);
        for i in 0..r {
            hbb[(i, i)] -= 2.0 * self.lambda;
        }
        let htb = -(cross.transpose() * l);
        let mut grad = DVector::zeros(d + r);
        grad.rows_mut(0, d).copy_from(&gtheta);
        grad.rows_mut(d, r).copy_from(&gbeta);
        let mut hess = DMatrix::zeros(d + r, d + r);
        hess.view_mut((0, 0), (d, d)).copy_from(&htt);
        hess.view_mut((0, d), (d, r)).copy_from(&htb);
        hess.view_mut((d, 0), (r, d)).copy_from(&htb.transpose());
        hess.view_mut((d, d), (r, r)).copy_from(&hbb);
        Ok((value, grad, hess))
    }
}

struct ChiSolution {
    x: DVector<f64>,
    penalized: f64,
    unpenalized: f64,
    hess: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    note: Option<String>,
}

fn solve_chi(problem: &ChiProblem<'_>, x0: DVector<f64>, opts: &FitOptions) -> Result<ChiSolution> {
    let out = newton_maximize(
        x0,
        |x| problem.value(x),
        |x| problem.derivs(x),
        opts.tol,
        opts.max_iter,
    )?;
    let unpenalized = problem.raw_value(&out.x)?;
    Ok(ChiSolution {
        penalized: out.value,
        unpenalized,
        x: out.x,
        hess: out.hess,
        iterations: out.iterations,
        converged: out.converged,
        note: out.note,
    })
}

fn chi_fit_result(
    problem: &ChiProblem<'_>,
    sol: ChiSolution,
) -> Result<FitResult> {
    let d = problem.dim();
    let r = problem.basis.rank();
    let beta = sol.x.rows(d, r).into_owned();
    let mut diagnostics: Vec<String> = sol.note.into_iter().collect();
    let covariance = match confidence_from_m(&sol.hess, d) {
        Ok(c) => Some(c),
        Err(e) => {
            diagnostics.push(format!("covariance omitted: {e}"));
            None
        }
    };
    Ok(FitResult {
        theta_hat: split_theta(&sol.x, d)?,
        nu_hat: NuEstimate::Kernel(problem.basis.expansion(&beta)?),
        covariance,
        objective: sol.penalized,
        iterations: sol.iterations,
        converged: sol.converged,
        diagnostics,
    })
}

/// Maximises the penalised `M_chi` jointly over `theta` and the representer
/// coefficients of `chi` (centers are the ancestors `y_0..y_{n-1}`).
pub fn fit_poisson_chi(
    model: &dyn EnergyModel,
    sample: &SampleSet,
    rule: &QuadratureRule,
    kernel: Kernel,
    pen: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    let basis = RepresenterBasis::new(kernel, sample.ancestors())?;
    let problem = ChiProblem { model, sample, rule, basis: &basis, lambda: pen.lambda_pen };
    let d = model.dim();
    let mut x0 = DVector::zeros(d + basis.rank());
    x0.rows_mut(0, d).copy_from(&opts.start(d)?);
    let sol = solve_chi(&problem, x0, opts)?;
    chi_fit_result(&problem, sol)
}

/// Unpenalised `M_chi` at the penalised optimum for each `lambda` in a
/// strictly decreasing grid. Each fit is warm-started from the previous one.
pub fn lambda_path(
    model: &dyn EnergyModel,
    sample: &SampleSet,
    rule: &QuadratureRule,
    kernel: Kernel,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::invalid("penalty grid is empty"));
    }
    validate_grid(grid)?;
    let basis = RepresenterBasis::new(kernel, sample.ancestors())?;
    let d = model.dim();
    let mut x = DVector::zeros(d + basis.rank());
    let opts = FitOptions { tol: 1e-9, max_iter: 500, theta_init: None };
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let problem = ChiProblem { model, sample, rule, basis: &basis, lambda };
        let sol = solve_chi(&problem, x.clone(), &opts)?;
        path.push((lambda, sol.unpenalized));
        x = sol.x;
    }
    Ok(path)
}

/// Covariance over theta from the joint Hessian of a Poisson-transformed
/// objective: `C^-1 = -(H_aa - H_ab H_bb^-1 H_ba)`, where the trailing block
/// holds the normalising parameters.
pub fn confidence_from_m(joint_hessian: &DMatrix<f64>, theta_dim: usize) -> Result<DMatrix<f64>> {
    let p = joint_hessian.nrows();
    if joint_hessian.ncols() != p || theta_dim == 0 || theta_dim >= p {
        return Err(Error::invalid(format!(
            "joint Hessian of size {p}x{} cannot be split at theta dimension {theta_dim}",
            joint_hessian.ncols()
        )));
    }
    let q = p - theta_dim;
    let haa = joint_hessian.view((0, 0), (theta_dim, theta_dim));
    let hab = joint_hessian.view((0, theta_dim), (theta_dim, q));
    let hbb = joint_hessian.view((theta_dim, theta_dim), (q, q)).into_owned();
    let neg_bb = (-hbb)
        .cholesky()
        .ok_or_else(|| Error::numerical("normaliser block of the Hessian is singular"))?;
    // H_ab H_bb^-1 H_ba = -H_ab (-H_bb)^-1 H_ba
    let solved = neg_bb.solve(&hab.transpose());
    let schur = haa + hab * solved;
    let info = -schur;
    let info = 0.5 * (&info + info.transpose());
    let ch = info
        .cholesky()
        .ok_or_else(|| Error::numerical("Schur complement is not negative definite"))?;
    let cov = ch.inverse();
    Ok(0.5 * (&cov + cov.transpose()))
}

/// Largest Hessian eigenvalue of `M` at each sampled point.
#[derive(Debug, Clone, Serialize)]
pub struct ConcavityReport {
    pub max_eigenvalues: Vec<f64>,
    pub tolerance: f64,
    pub all_pass: bool,
}

pub const CONCAVITY_TOLERANCE: f64 = 1e-8;

pub fn check_concavity(
    model: &dyn EnergyModel,
    theta_samples: &[ParamVector],
    nu_samples: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<ConcavityReport> {
    if !model.has_suff_stats() {
        return Err(Error::MissingSufficientStatistics);
    }
    if theta_samples.len() != nu_samples.len() {
        return Err(Error::LengthMismatch { expected: theta_samples.len(), got: nu_samples.len() });
    }
    let mut max_eigenvalues = Vec::with_capacity(nu_samples.len());
    for (theta, &nu) in theta_samples.iter().zip(nu_samples) {
        let h = m_hessian(model, theta, nu, sample, rule)?;
        let eig = SymmetricEigen::new(h);
        max_eigenvalues.push(eig.eigenvalues.max());
    }
    let all_pass = max_eigenvalues.iter().all(|&e| e <= CONCAVITY_TOLERANCE);
    Ok(ConcavityReport { max_eigenvalues, tolerance: CONCAVITY_TOLERANCE, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, ToyChain, ToyIid};
    use crate::quadrature::{exact_loglik, gauss_legendre, DEFAULT_NODES};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn rule() -> QuadratureRule {
        gauss_legendre(DEFAULT_NODES, Domain::symmetric_unit()).unwrap()
    }

    fn small_sample() -> SampleSet {
        SampleSet::new(Domain::symmetric_unit(), 0.0, vec![0.1, -0.3, 0.5, 0.7, -0.9]).unwrap()
    }

    #[test]
    fn nu_star_examples() {
        let r = rule();
        assert!((nu_star(&ToyIid, &pv(&[0.0, 0.0]), 0.0, &r).unwrap() + 2f64.ln()).abs() < 1e-12);
        let exact = -(std::f64::consts::E - (-1.0f64).exp()).ln();
        assert!((nu_star(&ToyIid, &pv(&[1.0, 0.0]), 0.0, &r).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn m_at_nu_star_is_loglik_minus_n() {
        let r = rule();
        let s = small_sample();
        let m = m_objective(&ToyIid, &pv(&[0.0, 0.0]), -2f64.ln(), &s, &r).unwrap();
        assert!((m - (-5.0 * 2f64.ln() - 5.0)).abs() < 1e-12);
        assert!((m + 8.465736).abs() < 1e-6);
        let th = pv(&[0.7, 4.0]);
        let ns = nu_star(&ToyIid, &th, 0.0, &r).unwrap();
        let m = m_objective(&ToyIid, &th, ns, &s, &r).unwrap();
        let l = exact_loglik(&ToyIid, &th, &s, &r).unwrap();
        assert!((m - (l - 5.0)).abs() < 1e-9);
        for delta in [-0.5, 0.5] {
            assert!(m_objective(&ToyIid, &th, ns + delta, &s, &r).unwrap() < m);
        }
        let g = m_grad(&ToyIid, &th, ns, &s, &r).unwrap();
        assert!(g[2].abs() < 1e-10);
    }

    #[test]
    fn nu_block_at_origin_is_minus_two_n() {
        let r = rule();
        let s = small_sample();
        let h = m_hessian(&ToyIid, &pv(&[0.0, 0.0]), 0.0, &s, &r).unwrap();
        assert!((h[(2, 2)] + 10.0).abs() < 1e-10);
    }

    #[test]
    fn seq_objective_single_term_matches_m() {
        let r = rule();
        let s = SampleSet::new(Domain::symmetric_unit(), 0.2, vec![0.4]).unwrap();
        let th = pv(&[-0.5, 3.0]);
        let a = m_seq_objective(&ToyChain, &th, &[0.3], &s, &r).unwrap();
        let b = m_objective(&ToyChain, &th, 0.3, &s, &r).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            m_seq_objective(&ToyChain, &th, &[0.3, 0.1], &s, &r),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn seq_objective_at_nu_star_and_perturbations() {
        let r = rule();
        let s = small_sample();
        let th = pv(&[-1.0, 5.0]);
        let nus: Vec<f64> =
            s.ancestors().iter().map(|&p| nu_star(&ToyChain, &th, p, &r).unwrap()).collect();
        let m = m_seq_objective(&ToyChain, &th, &nus, &s, &r).unwrap();
        let l = exact_loglik(&ToyChain, &th, &s, &r).unwrap();
        assert!((m - (l - 5.0)).abs() < 1e-8);
        for t in 0..nus.len() {
            let mut p = nus.clone();
            p[t] += 0.05;
            assert!(m_seq_objective(&ToyChain, &th, &p, &s, &r).unwrap() < m);
        }
    }

    #[test]
    fn chi_penalty_vanishes_at_zero_alpha() {
        let r = rule();
        let s = small_sample();
        let th = pv(&[0.3, 2.0]);
        let k = Kernel::gaussian(0.5).unwrap();
        let zero = KernelExpansion::zero(k, s.ancestors());
        let a = m_chi_objective(&ToyChain, &th, &zero, &PenaltyConfig::fixed(10.0).unwrap(), &s, &r).unwrap();
        let b = m_seq_objective(&ToyChain, &th, &[0.0; 5], &s, &r).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn confidence_from_m_rejects_bad_shapes() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(confidence_from_m(&h, 0).is_err());
        assert!(confidence_from_m(&h, 2).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(confidence_from_m(&singular, 1).is_err());
        let c = confidence_from_m(&h, 1).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn penalty_grid_validation() {
        assert!(PenaltyConfig::new(1.0, vec![1.0, 0.1]).is_ok());
        assert!(PenaltyConfig::new(1.0, vec![0.1, 1.0]).is_err());
        assert!(PenaltyConfig::new(-1.0, vec![]).is_err());
        assert!(PenaltyConfig::new(1.0, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn concavity_requires_exponential_family() {
        let r = rule();
        let s = small_sample();
        let pinned = crate::model::Restricted::new(ToyIid, vec![None, Some(1.0)]).unwrap();
        assert!(matches!(
            check_concavity(&pinned, &[pv(&[0.0])], &[0.0], &s, &r),
            Err(Error::MissingSufficientStatistics)
        ));
    }
}
