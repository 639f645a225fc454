//! Parameter vectors, the 1-D domain, the conditional energy-model
//! abstraction, sample containers and reference densities.
//!
//! An energy model evaluates the unnormalised log-density
//! `f_theta(y | y_prev)`. IID models are conditional models that ignore the
//! ancestor, so the same machinery covers both cases.

use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model parameter vector. All entries are finite and the length is at least one.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have at least one entry"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter entry {bad} is not finite")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamVector({:?})", self.0)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

/// Closed interval `[lower, upper]` the observations live on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: f64,
    upper: f64,
}

impl Domain {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(Error::invalid(format!("invalid domain [{lower}, {upper}]")));
        }
        Ok(Domain { lower, upper })
    }

    /// The toy chain's interval `[-1, 1]`.
    pub fn symmetric_unit() -> Self {
        Domain { lower: -1.0, upper: 1.0 }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lower && y <= self.upper
    }

    pub fn check(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { value: y, lower: self.lower, upper: self.upper })
        }
    }
}

/// Unnormalised conditional log-density `f_theta(y | y_prev)` on a 1-D domain.
///
/// Implementations must be pure: the fitters and the benchmark harness share
/// one instance across threads.
pub trait EnergyModel: Send + Sync {
    /// Number of parameters `d`.
    fn dim(&self) -> usize;

    fn domain(&self) -> Domain;

    fn energy(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<f64>;

    /// Writes `d f / d theta` into `out` (length `dim()`).
    fn grad_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()>;

    /// Whether `f_theta = theta^T s(y, y_prev)` holds exactly.
    fn has_suff_stats(&self) -> bool {
        false
    }

    fn suff_stats_into(&self, _y: f64, _y_prev: f64, _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingSufficientStatistics)
    }

    /// `false` when the energy ignores the ancestor (IID models).
    fn depends_on_prev(&self) -> bool {
        true
    }

    /// Writes the row-major `d x d` second derivative of the energy.
    ///
    /// Linear-in-theta models get zeros; everything else falls back to
    /// central differences of `grad_into`.
    fn hessian_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        if self.has_suff_stats() {
            out[..d * d].iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let mut tp = theta.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..d {
            let h = 1e-5 * theta[j].abs().max(1.0);
            tp[j] = theta[j] + h;
            self.grad_into(&tp, y, y_prev, &mut gp)?;
            tp[j] = theta[j] - h;
            self.grad_into(&tp, y, y_prev, &mut gm)?;
            tp[j] = theta[j];
            for i in 0..d {
                out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (out[i * d + j] + out[j * d + i]);
                out[i * d + j] = avg;
                out[j * d + i] = avg;
            }
        }
        Ok(())
    }

    fn grad_theta(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim());
        self.grad_into(theta, y, y_prev, g.as_mut_slice())?;
        Ok(g)
    }

    fn suff_stats(&self, y: f64, y_prev: f64) -> Result<DVector<f64>> {
        let mut s = DVector::zeros(self.dim());
        self.suff_stats_into(y, y_prev, s.as_mut_slice())?;
        Ok(s)
    }

    fn energy_hessian(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut buf = vec![0.0; d * d];
        self.hessian_into(theta, y, y_prev, &mut buf)?;
        Ok(DMatrix::from_row_slice(d, d, &buf))
    }
}

impl<M: EnergyModel + ?Sized> EnergyModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn energy(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<f64> {
        (**self).energy(theta, y, y_prev)
    }
    fn grad_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        (**self).grad_into(theta, y, y_prev, out)
    }
    fn has_suff_stats(&self) -> bool {
        (**self).has_suff_stats()
    }
    fn suff_stats_into(&self, y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        (**self).suff_stats_into(y, y_prev, out)
    }
    fn depends_on_prev(&self) -> bool {
        (**self).depends_on_prev()
    }
    fn hessian_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        (**self).hessian_into(theta, y, y_prev, out)
    }
}

pub(crate) fn check_theta_len(model: &dyn EnergyModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::LengthMismatch { expected: model.dim(), got: theta.len() });
    }
    Ok(())
}

/// The toy Markov chain on `[-1, 1]`:
/// `f(y | p) = theta1 * y - theta2 / 2 * (y - p)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyChain;

impl ToyChain {
    fn stats(y: f64, y_prev: f64) -> [f64; 2] {
        let diff = y - y_prev;
        [y, -0.5 * diff * diff]
    }

    fn check_args(theta: &[f64], y: f64, y_prev: f64) -> Result<()> {
        if theta.len() != 2 {
            return Err(Error::LengthMismatch { expected: 2, got: theta.len() });
        }
        let dom = Domain::symmetric_unit();
        dom.check(y)?;
        dom.check(y_prev)
    }
}

impl EnergyModel for ToyChain {
    fn dim(&self) -> usize {
        2
    }

    fn domain(&self) -> Domain {
        Domain::symmetric_unit()
    }

    fn energy(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<f64> {
        Self::check_args(theta, y, y_prev)?;
        let s = Self::stats(y, y_prev);
        Ok(theta[0] * s[0] + theta[1] * s[1])
    }

    fn grad_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        Self::check_args(theta, y, y_prev)?;
        out[..2].copy_from_slice(&Self::stats(y, y_prev));
        Ok(())
    }

    fn has_suff_stats(&self) -> bool {
        true
    }

    fn suff_stats_into(&self, y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        let dom = Domain::symmetric_unit();
        dom.check(y)?;
        dom.check(y_prev)?;
        out[..2].copy_from_slice(&Self::stats(y, y_prev));
        Ok(())
    }
}

/// IID counterpart of [`ToyChain`]: the ancestor is pinned at zero, so
/// `f(y) = theta1 * y - theta2 / 2 * y^2` whatever `y_prev` is passed.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyIid;

impl EnergyModel for ToyIid {
    fn dim(&self) -> usize {
        2
    }

    fn domain(&self) -> Domain {
        Domain::symmetric_unit()
    }

    fn energy(&self, theta: &[f64], y: f64, _y_prev: f64) -> Result<f64> {
        ToyChain.energy(theta, y, 0.0)
    }

    fn grad_into(&self, theta: &[f64], y: f64, _y_prev: f64, out: &mut [f64]) -> Result<()> {
        ToyChain.grad_into(theta, y, 0.0, out)
    }

    fn has_suff_stats(&self) -> bool {
        true
    }

    fn suff_stats_into(&self, y: f64, _y_prev: f64, out: &mut [f64]) -> Result<()> {
        ToyChain.suff_stats_into(y, 0.0, out)
    }

    fn depends_on_prev(&self) -> bool {
        false
    }
}

/// Holds a subset of an inner model's parameters fixed.
///
/// `Restricted::new(ToyIid, vec![None, Some(0.0)])` is the one-parameter
/// exponential tilt `f(y) = theta1 * y`.
#[derive(Debug, Clone)]
pub struct Restricted<M> {
    inner: M,
    layout: Vec<Option<f64>>,
    free: Vec<usize>,
}

impl<M: EnergyModel> Restricted<M> {
    pub fn new(inner: M, layout: Vec<Option<f64>>) -> Result<Self> {
        if layout.len() != inner.dim() {
            return Err(Error::LengthMismatch { expected: inner.dim(), got: layout.len() });
        }
        let free: Vec<usize> =
            layout.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
        if free.is_empty() {
            return Err(Error::invalid("restricted model needs at least one free parameter"));
        }
        Ok(Restricted { inner, layout, free })
    }

    fn embed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.free.len() {
            return Err(Error::LengthMismatch { expected: self.free.len(), got: theta.len() });
        }
        let mut full = Vec::with_capacity(self.layout.len());
        let mut it = theta.iter();
        for slot in &self.layout {
            full.push(match slot {
                Some(v) => *v,
                None => *it.next().expect("free count matches"),
            });
        }
        Ok(full)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: EnergyModel> EnergyModel for Restricted<M> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn energy(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<f64> {
        self.inner.energy(&self.embed(theta)?, y, y_prev)
    }

    fn grad_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        let full = self.embed(theta)?;
        let mut g = vec![0.0; full.len()];
        self.inner.grad_into(&full, y, y_prev, &mut g)?;
        for (o, &i) in out.iter_mut().zip(&self.free) {
            *o = g[i];
        }
        Ok(())
    }

    // Only an exponential family when every pinned coefficient is zero.
    fn has_suff_stats(&self) -> bool {
        self.inner.has_suff_stats() && self.layout.iter().all(|v| v.is_none_or(|x| x == 0.0))
    }

    fn suff_stats_into(&self, y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        if !self.has_suff_stats() {
            return Err(Error::MissingSufficientStatistics);
        }
        let mut s = vec![0.0; self.layout.len()];
        self.inner.suff_stats_into(y, y_prev, &mut s)?;
        for (o, &i) in out.iter_mut().zip(&self.free) {
            *o = s[i];
        }
        Ok(())
    }

    fn depends_on_prev(&self) -> bool {
        self.inner.depends_on_prev()
    }

    fn hessian_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        let full = self.embed(theta)?;
        let dfull = full.len();
        let mut h = vec![0.0; dfull * dfull];
        self.inner.hessian_into(&full, y, y_prev, &mut h)?;
        let d = self.free.len();
        for (a, &i) in self.free.iter().enumerate() {
            for (b, &j) in self.free.iter().enumerate() {
                out[a * d + b] = h[i * dfull + j];
            }
        }
        Ok(())
    }
}

/// Toy-chain energy with argument validation.
pub fn toy_energy(theta: &ParamVector, y: f64, y_prev: f64) -> Result<f64> {
    ToyChain.energy(theta, y, y_prev)
}

/// Analytic theta-gradient of [`toy_energy`]; equal to the sufficient statistics.
pub fn toy_grad(theta: &ParamVector, y: f64, y_prev: f64) -> Result<DVector<f64>> {
    ToyChain.grad_theta(theta, y, y_prev)
}

/// Observed data: the constant initial point `y0` followed by `y1..yn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    initial: f64,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn new(domain: Domain, initial: f64, points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("sample set needs at least one point"));
        }
        domain.check(initial)?;
        for &p in &points {
            domain.check(p)?;
        }
        Ok(SampleSet { initial, points })
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ancestor of point `t` (0-based), i.e. `y_{t}` in 1-based chain notation.
    pub fn ancestor(&self, t: usize) -> f64 {
        if t == 0 {
            self.initial
        } else {
            self.points[t - 1]
        }
    }

    /// Ancestors `y0..y_{n-1}`.
    pub fn ancestors(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.ancestor(t)).collect()
    }

    /// `(y_prev, y)` transition pairs in chain order.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().enumerate().map(move |(t, &y)| (self.ancestor(t), y))
    }

    /// Concatenation of the sample with itself (used for scaling checks).
    pub fn duplicated(&self) -> SampleSet {
        let mut pts = self.points.clone();
        pts.extend_from_slice(&self.points);
        SampleSet { initial: self.initial, points: pts }
    }
}

/// Density `q(r | y_prev)` of the reference (negative) examples.
pub trait ReferenceDensity: Send + Sync {
    fn domain(&self) -> Domain;
    fn log_density(&self, r: f64, y_prev: f64) -> f64;
    fn sample(&self, y_prev: f64, rng: &mut dyn RngCore) -> f64;
}

/// Uniform reference density on a domain.
#[derive(Debug, Clone, Copy)]
pub struct UniformReference {
    domain: Domain,
    log_q: f64,
}

impl UniformReference {
    pub fn new(domain: Domain) -> Self {
        UniformReference { domain, log_q: -domain.width().ln() }
    }
}

impl ReferenceDensity for UniformReference {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn log_density(&self, r: f64, _y_prev: f64) -> f64 {
        if self.domain.contains(r) {
            self.log_q
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample(&self, _y_prev: f64, rng: &mut dyn RngCore) -> f64 {
        self.domain.lower + self.domain.width() * rng.random::<f64>()
    }
}

pub fn uniform_reference(domain: Domain) -> UniformReference {
    UniformReference::new(domain)
}
