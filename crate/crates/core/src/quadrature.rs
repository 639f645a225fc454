//! Gauss-Legendre integration over the domain, log-partition functions and
//! the exact log-likelihood with its derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fit::{covariance_from_hessian, newton_maximize, FitOptions, FitResult, NuEstimate};
use crate::model::{check_theta_len, Domain, EnergyModel, ParamVector, SampleSet};

/// Default number of nodes; resolves the toy kernel up to `theta2 ~ 100`.
pub const DEFAULT_NODES: usize = 401;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    domain: Domain,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub(crate) fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `n`-point Gauss-Legendre rule mapped onto `domain`.
pub fn gauss_legendre(n: usize, domain: Domain) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::invalid("Gauss-Legendre rule needs at least one node"));
    }
    let mut ref_nodes = vec![0.0; n];
    let mut ref_weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        ref_nodes[i] = -x;
        ref_nodes[n - 1 - i] = x;
        ref_weights[i] = w;
        ref_weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        ref_nodes[n / 2] = 0.0;
    }
    let half = 0.5 * domain.width();
    let mid = 0.5 * (domain.lower() + domain.upper());
    let nodes: Vec<f64> = ref_nodes.iter().map(|x| mid + half * x).collect();
    let weights: Vec<f64> = ref_weights.iter().map(|w| half * w).collect();
    let log_weights = weights.iter().map(|w| w.ln()).collect();
    Ok(QuadratureRule { nodes, weights, log_weights, domain })
}

/// `log Z(theta | y_prev)`, the log of the integrated unnormalised density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPartition(f64);

impl LogPartition {
    pub fn value(&self) -> f64 {
        self.0
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn energies_on_rule(
    model: &dyn EnergyModel,
    theta: &[f64],
    y_prev: f64,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    rule.nodes
        .iter()
        .map(|&x| {
            let e = model.energy(theta, x, y_prev)?;
            if e.is_finite() {
                Ok(e)
            } else {
                Err(Error::numerical(format!("energy is not finite at node {x}")))
            }
        })
        .collect()
}

pub fn log_partition(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    y_prev: f64,
    rule: &QuadratureRule,
) -> Result<LogPartition> {
    check_theta_len(model, theta)?;
    log_partition_raw(model, theta, y_prev, rule).map(LogPartition)
}

pub(crate) fn log_partition_raw(
    model: &dyn EnergyModel,
    theta: &[f64],
    y_prev: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let lw: Vec<f64> = energies_on_rule(model, theta, y_prev, rule)?
        .into_iter()
        .zip(rule.log_weights())
        .map(|(e, lw)| e + lw)
        .collect();
    Ok(log_sum_exp(&lw))
}

/// Moments of the energy gradient under the normalised conditional density
/// `exp{f - log Z}`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub log_z: f64,
    /// `E[df/dtheta]`.
    pub mean: DVector<f64>,
    /// `E[d2f/dtheta2] + E[(df/dtheta)(df/dtheta)^T]`; empty unless requested.
    pub second: DMatrix<f64>,
}

impl Moments {
    /// `Var[df] + E[d2f]`, the Hessian of the log-partition.
    pub fn log_partition_hessian(&self) -> DMatrix<f64> {
        &self.second - &self.mean * self.mean.transpose()
    }
}

pub(crate) fn conditional_moments(
    model: &dyn EnergyModel,
    theta: &[f64],
    y_prev: f64,
    rule: &QuadratureRule,
    with_second: bool,
) -> Result<Moments> {
    let d = model.dim();
    let energies = energies_on_rule(model, theta, y_prev, rule)?;
    let lw: Vec<f64> = energies.iter().zip(rule.log_weights()).map(|(e, l)| e + l).collect();
    let log_z = log_sum_exp(&lw);
    if !log_z.is_finite() {
        return Err(Error::numerical("log-partition is not finite"));
    }
    let mut mean = DVector::zeros(d);
    let mut second = if with_second { DMatrix::zeros(d, d) } else { DMatrix::zeros(0, 0) };
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let linear = model.has_suff_stats();
    for (i, &x) in rule.nodes.iter().enumerate() {
        let p = (lw[i] - log_z).exp();
        if p == 0.0 {
            continue;
        }
        model.grad_into(theta, x, y_prev, &mut g)?;
        for a in 0..d {
            mean[a] += p * g[a];
        }
        if with_second {
            if !linear {
                model.hessian_into(theta, x, y_prev, &mut h)?;
            }
            for a in 0..d {
                for b in 0..d {
                    let hv = if linear { 0.0 } else { h[a * d + b] };
                    second[(a, b)] += p * (g[a] * g[b] + hv);
                }
            }
        }
    }
    Ok(Moments { log_z, mean, second })
}

/// Conditional moments for every ancestor of `sample`, computed once when
/// the model ignores the ancestor.
pub(crate) fn ancestor_moments(
    model: &dyn EnergyModel,
    theta: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
    with_second: bool,
) -> Result<Vec<Moments>> {
    if !model.depends_on_prev() {
        let m = conditional_moments(model, theta, sample.initial(), rule, with_second)?;
        return Ok(vec![m; sample.len()]);
    }
    sample
        .ancestors()
        .into_iter()
        .map(|p| conditional_moments(model, theta, p, rule, with_second))
        .collect()
}

pub(crate) fn data_energy_sum(model: &dyn EnergyModel, theta: &[f64], sample: &SampleSet) -> Result<f64> {
    sample.transitions().map(|(p, y)| model.energy(theta, y, p)).sum()
}

pub(crate) fn data_grad_sum(model: &dyn EnergyModel, theta: &[f64], sample: &SampleSet) -> Result<DVector<f64>> {
    let d = model.dim();
    let mut acc = DVector::zeros(d);
    let mut g = vec![0.0; d];
    for (p, y) in sample.transitions() {
        model.grad_into(theta, y, p, &mut g)?;
        for a in 0..d {
            acc[a] += g[a];
        }
    }
    Ok(acc)
}

pub(crate) fn data_hessian_sum(model: &dyn EnergyModel, theta: &[f64], sample: &SampleSet) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let mut acc = DMatrix::zeros(d, d);
    if model.has_suff_stats() {
        return Ok(acc);
    }
    let mut h = vec![0.0; d * d];
    for (p, y) in sample.transitions() {
        model.hessian_into(theta, y, p, &mut h)?;
        acc += DMatrix::from_row_slice(d, d, &h);
    }
    Ok(acc)
}

fn exact_loglik_raw(
    model: &dyn EnergyModel,
    theta: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    let data = data_energy_sum(model, theta, sample)?;
    let norm: f64 = if model.depends_on_prev() {
        sample
            .ancestors()
            .into_iter()
            .map(|p| log_partition_raw(model, theta, p, rule))
            .sum::<Result<f64>>()?
    } else {
        sample.len() as f64 * log_partition_raw(model, theta, sample.initial(), rule)?
    };
    Ok(data - norm)
}

/// `L(theta) = sum_t [f(y_t | y_{t-1}) - log Z_t(theta)]`.
pub fn exact_loglik(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_theta_len(model, theta)?;
    exact_loglik_raw(model, theta, sample, rule)
}

fn loglik_derivs(
    model: &dyn EnergyModel,
    theta: &[f64],
    sample: &SampleSet,
    rule: &QuadratureRule,
    with_hessian: bool,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let moments = ancestor_moments(model, theta, sample, rule, with_hessian)?;
    let value = data_energy_sum(model, theta, sample)? - moments.iter().map(|m| m.log_z).sum::<f64>();
    let mut grad = data_grad_sum(model, theta, sample)?;
    for m in &moments {
        grad -= &m.mean;
    }
    let hess = if with_hessian {
        let mut h = data_hessian_sum(model, theta, sample)?;
        for m in &moments {
            h -= m.log_partition_hessian();
        }
        0.5 * (&h + h.transpose())
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok((value, grad, hess))
}

/// Gradient of [`exact_loglik`]: `sum df(y_t) - sum_t E_t[df]`.
pub fn exact_loglik_grad(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    check_theta_len(model, theta)?;
    Ok(loglik_derivs(model, theta, sample, rule, false)?.1)
}

/// Hessian of [`exact_loglik`], including the covariance term of each
/// conditional density.
pub fn exact_loglik_hessian(
    model: &dyn EnergyModel,
    theta: &ParamVector,
    sample: &SampleSet,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    check_theta_len(model, theta)?;
    Ok(loglik_derivs(model, theta, sample, rule, true)?.2)
}

/// Exact maximum likelihood by Newton ascent on [`exact_loglik`].
pub fn fit_ml(
    model: &dyn EnergyModel,
    sample: &SampleSet,
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<FitResult> {
    let x0 = opts.start(model.dim())?;
    let out = newton_maximize(
        x0,
        |x| exact_loglik_raw(model, x.as_slice(), sample, rule),
        |x| loglik_derivs(model, x.as_slice(), sample, rule, true),
        opts.tol,
        opts.max_iter,
    )?;
    let mut diagnostics: Vec<String> = out.note.into_iter().collect();
    let covariance = covariance_from_hessian(&out.hess);
    if covariance.is_none() {
        diagnostics.push("Hessian is not negative definite at the final iterate; covariance omitted".into());
    }
    let theta_hat = ParamVector::from_dvector(&out.x)
        .map_err(|_| Error::numerical("maximum-likelihood iterate is not finite"))?;
    Ok(FitResult {
        theta_hat,
        nu_hat: NuEstimate::None,
        covariance,
        objective: out.value,
        iterations: out.iterations,
        converged: out.converged,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{uniform_reference, ReferenceDensity, ToyChain, ToyIid};

    fn unit() -> Domain {
        Domain::symmetric_unit()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn single_node_rule() {
        let r = gauss_legendre(1, unit()).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert!((r.weights()[0] - 2.0).abs() < 1e-15);
        assert!(gauss_legendre(0, unit()).is_err());
    }

    #[test]
    fn two_node_rule_is_exact_to_degree_three() {
        let r = gauss_legendre(2, unit()).unwrap();
        assert!((r.integrate(|y| y * y) - 2.0 / 3.0).abs() < 1e-15);
        assert!(r.integrate(|y| y.powi(3) + 2.0 * y).abs() < 1e-15);
    }

    #[test]
    fn exponential_integral_with_fifty_nodes() {
        let r = gauss_legendre(50, unit()).unwrap();
        let exact = std::f64::consts::E - (-1.0f64).exp();
        assert!((r.integrate(f64::exp) - exact).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_width_and_nodes_are_interior() {
        for n in [1, 2, 7, 401, 801, 2001] {
            let dom = Domain::new(-0.5, 2.0).unwrap();
            let r = gauss_legendre(n, dom).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 2.5).abs() < 1e-12, "n={n} sum={s}");
            assert!(r.nodes().iter().all(|&x| x > -0.5 && x < 2.0));
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn uniform_reference_integrates_to_one() {
        let q = uniform_reference(unit());
        let r = gauss_legendre(DEFAULT_NODES, unit()).unwrap();
        let total = r.integrate(|y| q.log_density(y, 0.0).exp());
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_partition_examples() {
        let r = gauss_legendre(DEFAULT_NODES, unit()).unwrap();
        for prev in [-0.7, 0.0, 0.4] {
            let lz = log_partition(&ToyChain, &pv(&[0.0, 0.0]), prev, &r).unwrap().value();
            assert!((lz - 2f64.ln()).abs() < 1e-12);
            let lz = log_partition(&ToyChain, &pv(&[1.0, 0.0]), prev, &r).unwrap().value();
            let exact = (std::f64::consts::E - (-1.0f64).exp()).ln();
            assert!((lz - exact).abs() < 1e-12);
            assert!((lz - 0.8544).abs() < 1e-3);
        }
        let oracle = gauss_legendre(2001, unit()).unwrap();
        let theta = pv(&[-2.0, 50.0]);
        let a = log_partition(&ToyChain, &theta, 0.0, &r).unwrap().value();
        let b = log_partition(&ToyChain, &theta, 0.0, &oracle).unwrap().value();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn log_partition_converges_in_node_count() {
        let r1 = gauss_legendre(401, unit()).unwrap();
        let r2 = gauss_legendre(801, unit()).unwrap();
        for t2 in [-20.0, 0.0, 10.0, 50.0, 100.0] {
            for prev in [-1.0, -0.3, 0.9] {
                let th = pv(&[1.5, t2]);
                let a = log_partition(&ToyChain, &th, prev, &r1).unwrap().value();
                let b = log_partition(&ToyChain, &th, prev, &r2).unwrap().value();
                assert!((a - b).abs() < 1e-10, "t2={t2} prev={prev}");
            }
        }
    }

    #[test]
    fn log_partition_rejects_non_finite_energy() {
        struct Blowup;
        impl EnergyModel for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn domain(&self) -> Domain {
                Domain::symmetric_unit()
            }
            fn energy(&self, _: &[f64], y: f64, _: f64) -> Result<f64> {
                Ok(if y > 0.5 { f64::INFINITY } else { 0.0 })
            }
            fn grad_into(&self, _: &[f64], _: f64, _: f64, out: &mut [f64]) -> Result<()> {
                out[0] = 0.0;
                Ok(())
            }
        }
        let r = gauss_legendre(11, unit()).unwrap();
        assert!(matches!(
            log_partition(&Blowup, &pv(&[0.0]), 0.0, &r),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn exact_loglik_examples() {
        let r = gauss_legendre(DEFAULT_NODES, unit()).unwrap();
        let s = SampleSet::new(unit(), 0.3, vec![0.1, -0.4, 0.9, 0.0]).unwrap();
        let l = exact_loglik(&ToyChain, &pv(&[0.0, 0.0]), &s, &r).unwrap();
        assert!((l + 4.0 * 2f64.ln()).abs() < 1e-12);
        let s1 = SampleSet::new(unit(), -0.8, vec![0.5]).unwrap();
        let l = exact_loglik(&ToyChain, &pv(&[1.0, 0.0]), &s1, &r).unwrap();
        let exact = 0.5 - (std::f64::consts::E - (-1.0f64).exp()).ln();
        assert!((l - exact).abs() < 1e-12);
        assert!((l + 0.3544).abs() < 1e-3);
    }

    #[test]
    fn iid_cache_matches_conditional_evaluation() {
        let r = gauss_legendre(101, unit()).unwrap();
        let s = SampleSet::new(unit(), 0.0, vec![0.2, -0.5, 0.7]).unwrap();
        let th = pv(&[0.4, 3.0]);
        // ToyChain with every ancestor at zero equals ToyIid.
        let zeros = SampleSet::new(unit(), 0.0, vec![0.2]).unwrap();
        let a = exact_loglik(&ToyIid, &th, &s, &r).unwrap();
        let b: f64 = s
            .points()
            .iter()
            .map(|&y| {
                let one = SampleSet::new(unit(), 0.0, vec![y]).unwrap();
                exact_loglik(&ToyChain, &th, &one, &r).unwrap()
            })
            .sum();
        assert!((a - b).abs() < 1e-12);
        assert!(exact_loglik(&ToyIid, &th, &zeros, &r).is_ok());
    }

    #[test]
    fn gradient_at_uniform_is_data_sum() {
        let r = gauss_legendre(DEFAULT_NODES, unit()).unwrap();
        let s = SampleSet::new(unit(), 0.0, vec![0.3, -0.1, 0.6]).unwrap();
        let g = exact_loglik_grad(&ToyChain, &pv(&[0.0, 0.0]), &s, &r).unwrap();
        assert!((g[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn one_observation_fit_does_not_panic() {
        let r = gauss_legendre(DEFAULT_NODES, unit()).unwrap();
        let s = SampleSet::new(unit(), 0.0, vec![1.0]).unwrap();
        let fit = fit_ml(&ToyChain, &s, &r, &FitOptions::default()).unwrap();
        assert!(!fit.converged || fit.objective.is_finite());
        assert!(!fit.converged, "single boundary observation has no finite maximiser");
    }
}
