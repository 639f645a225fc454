//! Fit results and the damped Newton ascent shared by every deterministic fitter.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::KernelExpansion;
use crate::model::ParamVector;

/// Estimate of the normalising term(s) that accompany `theta`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NuEstimate {
    /// Exact likelihood fits carry no free normaliser.
    None,
    Scalar(f64),
    Vector(Vec<f64>),
    Kernel(KernelExpansion),
    /// Global intercept plus a kernel expansion in the ancestor.
    Semi { intercept: f64, chi: KernelExpansion },
}

impl NuEstimate {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            NuEstimate::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub nu_hat: NuEstimate,
    /// Covariance over theta only; symmetric PSD when present.
    #[serde(serialize_with = "serialize_opt_matrix")]
    pub covariance: Option<DMatrix<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    /// Standard errors from the covariance diagonal.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn serialize_opt_matrix<S: serde::Serializer>(
    m: &Option<DMatrix<f64>>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => s.serialize_some(&matrix_rows(m)),
        None => s.serialize_none(),
    }
}

/// Options for the Newton-type fitters.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence threshold on the gradient infinity-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting theta; the zero vector when absent.
    pub theta_init: Option<ParamVector>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-8, max_iter: 200, theta_init: None }
    }
}

impl FitOptions {
    pub(crate) fn start(&self, dim: usize) -> Result<DVector<f64>> {
        match &self.theta_init {
            Some(t) if t.dim() != dim => Err(Error::LengthMismatch { expected: dim, got: t.dim() }),
            Some(t) => Ok(t.to_dvector()),
            None => Ok(DVector::zeros(dim)),
        }
    }
}

pub(crate) const ARMIJO_C: f64 = 1e-4;
pub(crate) const BACKTRACK_SHRINK: f64 = 0.5;

pub(crate) struct NewtonOutcome<H = DMatrix<f64>> {
    pub x: DVector<f64>,
    pub value: f64,
    pub hess: H,
    pub iterations: usize,
    pub converged: bool,
    pub note: Option<String>,
}

/// Solves `(-H) step = g`, shifting the diagonal until `-H` factorises.
pub(crate) fn ascent_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let neg = -h;
    if let Some(ch) = neg.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = neg.diagonal().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let mut tau = 1e-10 * scale;
    for _ in 0..40 {
        let mut shifted = neg.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += tau;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(g));
        }
        tau *= 10.0;
    }
    None
}

/// Damped Newton ascent with Armijo backtracking.
///
/// `derivs` returns value, gradient and Hessian; `value` is used inside the
/// line search. Evaluation errors during the line search count as rejected
/// trial points.
pub(crate) fn newton_maximize<V, D>(
    x0: DVector<f64>,
    value: V,
    derivs: D,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome>
where
    V: Fn(&DVector<f64>) -> Result<f64>,
    D: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>,
{
    newton_maximize_with(x0, value, derivs, ascent_direction, tol, max_iter)
}

/// [`newton_maximize`] with a caller-supplied curvature type and solver.
pub(crate) fn newton_maximize_with<H, V, D, S>(
    x0: DVector<f64>,
    value: V,
    derivs: D,
    solve: S,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome<H>>
where
    V: Fn(&DVector<f64>) -> Result<f64>,
    D: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>, H)>,
    S: Fn(&DVector<f64>, &H) -> Option<DVector<f64>>,
{
    let mut x = x0;
    let (mut f, mut g, mut h) = derivs(&x)?;
    if !f.is_finite() {
        return Err(Error::numerical("objective is not finite at the starting point"));
    }
    let mut iterations = 0;
    let mut note = None;
    loop {
        if g.amax() <= tol {
            return Ok(NewtonOutcome { x, value: f, hess: h, iterations, converged: true, note });
        }
        if iterations >= max_iter {
            note = Some(format!("reached {max_iter} iterations with |grad|_inf = {:.3e}", g.amax()));
            break;
        }
        let Some(dir) = solve(&g, &h) else {
            note = Some("could not form an ascent direction".into());
            break;
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &dir;
            if let Ok(ft) = value(&trial) {
                if ft.is_finite() && ft >= f + ARMIJO_C * step * slope {
                    accepted = Some(trial);
                    break;
                }
                // Rounding regime: the predicted gain is below what f64 can resolve.
                if step == 1.0
                    && ft.is_finite()
                    && slope <= 1e-13 * (1.0 + f.abs())
                    && ft >= f - 1e-12 * (1.0 + f.abs())
                {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= BACKTRACK_SHRINK;
        }
        let Some(next) = accepted else {
            note = Some(format!("line search failed with |grad|_inf = {:.3e}", g.amax()));
            break;
        };
        iterations += 1;
        x = next;
        (f, g, h) = derivs(&x)?;
    }
    let converged = g.amax() <= tol;
    Ok(NewtonOutcome { x, value: f, hess: h, iterations, converged, note })
}

/// Inverse of `-H` when it is positive definite.
pub(crate) fn covariance_from_hessian(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let neg = -h;
    let ch = neg.cholesky()?;
    let inv = ch.inverse();
    let sym = 0.5 * (&inv + inv.transpose());
    Some(sym)
}
