//! Monte Carlo estimate of the gradient of `M(theta, nu)` and stochastic
//! gradient ascent on it.
//!
//! The integral terms of the gradient are estimated by importance sampling
//! from a reference density `q`, which gives an unbiased estimate of the
//! exact (quadrature) gradient for any fixed `(theta, nu)`.

use nalgebra::DVector;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::fit::{FitResult, NuEstimate};
use crate::model::{check_theta_len, EnergyModel, ParamVector, ReferenceDensity, SampleSet};
use crate::quadrature::data_grad_sum;

/// Largest log-weight accepted before the estimate is declared overflowed.
const MAX_LOG_WEIGHT: f64 = 700.0;

/// Iterates whose Euclidean norm exceeds this abort the ascent.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct McGradient {
    pub grad_theta: DVector<f64>,
    pub grad_nu: f64,
    pub m_used: usize,
}

impl McGradient {
    /// `(grad_theta, grad_nu)` stacked into one vector.
    pub fn joint(&self) -> DVector<f64> {
        let d = self.grad_theta.len();
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&self.grad_theta);
        g[d] = self.grad_nu;
        g
    }
}

/// Robbins-Monro step sizes `step0 * t^{-gamma}`, `t = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgaSchedule {
    step0: f64,
    gamma: f64,
    max_steps: usize,
}

impl SgaSchedule {
    pub fn new(step0: f64, gamma: f64, max_steps: usize) -> Result<Self> {
        if !(step0.is_finite() && step0 > 0.0) {
            return Err(Error::invalid(format!("step0 must be positive, got {step0}")));
        }
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::invalid(format!("decay exponent must lie in (0.5, 1], got {gamma}")));
        }
        Ok(SgaSchedule { step0, gamma, max_steps })
    }

    /// `step0 = 1 / n`, `gamma = 0.7`. The gradient scales with `n`, so the
    /// first step moves `nu` by at most about one unit.
    pub fn default_for(n: usize, max_steps: usize) -> Self {
        SgaSchedule { step0: 1.0 / n.max(1) as f64, gamma: 0.7, max_steps }
    }

    pub fn step0(&self) -> f64 {
        self.step0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn step(&self, t: usize) -> f64 {
        self.step0 * (t.max(1) as f64).powf(-self.gamma)
    }
}

/// Importance-sampling estimate of the gradient of `M(theta, nu)`.
///
/// The `m` reference points are drawn from `q(. | y0)` with `y0` the
/// sample's initial point, matching [`crate::objective::m_objective`].
pub fn mc_gradient(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    nu: f64,
    sample: &SampleSet,
    q: &dyn ReferenceDensity,
    m: usize,
    rng: &mut dyn RngCore,
) -> Result<McGradient> {
    check_theta_len(model, theta)?;
    if m == 0 {
        return Err(Error::invalid("number of reference draws must be >= 1"));
    }
    if !nu.is_finite() {
        return Err(Error::invalid("nu must be finite"));
    }
    let d = model.dim();
    let n = sample.len() as f64;
    let prev = sample.initial();
    let data = data_grad_sum(model, theta, sample)?;

    let mut weighted = DVector::zeros(d);
    let mut grad_r = DVector::zeros(d);
    let mut weight_sum = 0.0;
    for _ in 0..m {
        let r = q.sample(prev, rng);
        model.domain().check(r)?;
        let log_w = model.energy(theta, r, prev)? + nu - q.log_density(r, prev);
        if log_w > MAX_LOG_WEIGHT || log_w.is_nan() {
            return Err(Error::numerical(format!(
                "importance weight overflow (log w = {log_w:.1}); start from a more negative nu offset"
            )));
        }
        let w = log_w.exp();
        model.grad_into(theta, r, prev, grad_r.as_mut_slice())?;
        weighted.axpy(w, &grad_r, 1.0);
        weight_sum += w;
    }
    let scale = n / m as f64;
    let grad_theta = data - scale * weighted;
    let grad_nu = n - scale * weight_sum;
    if grad_theta.iter().any(|v| !v.is_finite()) || !grad_nu.is_finite() {
        return Err(Error::numerical("Monte Carlo gradient is not finite"));
    }
    Ok(McGradient { grad_theta, grad_nu, m_used: m })
}

/// Iterates of a stochastic ascent run.
#[derive(Debug, Clone)]
pub struct SgaTrace {
    /// Final `(theta, nu)`.
    pub last: DVector<f64>,
    /// Mean over the last quarter of the iterates.
    pub average: DVector<f64>,
    pub steps: usize,
}

/// Runs `x <- x + step_t * grad(x)` for the schedule's steps.
///
/// `grad` may be stochastic; it is called once per step.
pub fn sga_ascend<G>(x0: DVector<f64>, schedule: &SgaSchedule, mut grad: G) -> Result<SgaTrace>
where
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let total = schedule.max_steps;
    let tail_start = total - total / 4;
    let mut x = x0;
    let mut sum = DVector::zeros(x.len());
    let mut tail = 0usize;
    for t in 1..=total {
        let g = grad(&x)?;
        if g.len() != x.len() {
            return Err(Error::LengthMismatch { expected: x.len(), got: g.len() });
        }
        x.axpy(schedule.step(t), &g, 1.0);
        let norm = x.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Diverged { step: t, norm });
        }
        if t > tail_start {
            sum += &x;
            tail += 1;
        }
    }
    let average = if tail == 0 { x.clone() } else { sum / tail as f64 };
    Ok(SgaTrace { last: x, average, steps: total })
}

/// Stochastic gradient ascent on `M(theta, nu)` from `(theta_init, nu_init)`.
///
/// `theta_hat`/`nu_hat` of the result are the trailing average; the last
/// iterate is reported in the diagnostics. No covariance is produced.
#[allow(clippy::too_many_arguments)]
pub fn sga_fit(
    model: &dyn EnergyModel,
    sample: &SampleSet,
    q: &dyn ReferenceDensity,
    schedule: &SgaSchedule,
    m_per_step: usize,
    theta_init: &ParamVector,
    nu_init: f64,
    rng: &mut dyn RngCore,
) -> Result<FitResult> {
    check_theta_len(model, theta_init)?;
    let d = model.dim();
    let mut x0 = DVector::zeros(d + 1);
    x0.rows_mut(0, d).copy_from(&theta_init.to_dvector());
    x0[d] = nu_init;
    let trace = sga_ascend(x0, schedule, |x| {
        let theta = ParamVector::new(x.rows(0, d).iter().copied().collect())?;
        Ok(mc_gradient(model, &theta, x[d], sample, q, m_per_step, rng)?.joint())
    })?;
    let theta_hat = ParamVector::new(trace.average.rows(0, d).iter().copied().collect())?;
    Ok(FitResult {
        theta_hat,
        nu_hat: NuEstimate::Scalar(trace.average[d]),
        covariance: None,
        objective: f64::NAN,
        iterations: trace.steps,
        converged: true,
        diagnostics: vec![format!("last iterate: {:?}", trace.last.as_slice())],
    })
}
