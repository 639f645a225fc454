//! Helpers shared by the integration tests. Oracles here are written
//! independently of the library internals.
#![allow(dead_code)]

use nalgebra::DVector;
use poisson_transform::chain::sample_chain;
use poisson_transform::quadrature::{gauss_legendre, DEFAULT_NODES};
use poisson_transform::rng::stream;
use poisson_transform::{Domain, EnergyModel, ParamVector, QuadratureRule, SampleSet, ToyChain, ToyIid};

pub fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

pub fn rule() -> QuadratureRule {
    gauss_legendre(DEFAULT_NODES, Domain::symmetric_unit()).unwrap()
}

pub fn iid_sample(theta: [f64; 2], n: usize, seed: u64) -> SampleSet {
    sample_chain(&ToyIid, &pv(&theta), n, 0.0, &mut stream(seed, &[0])).unwrap()
}

pub fn chain_sample(theta: [f64; 2], n: usize, seed: u64) -> SampleSet {
    sample_chain(&ToyChain, &pv(&theta), n, 0.0, &mut stream(seed, &[0])).unwrap()
}

/// Central differences with step `1e-5 * max(1, |x_i|)`.
pub fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|b|_inf, 1)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn dv(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Composite Simpson on `[-1, 1]` with `2 * half` panels, log-sum-exp stabilised.
pub fn simpson_log_integral(f: impl Fn(f64) -> f64, half: usize) -> f64 {
    let m = 2 * half;
    let h = 2.0 / m as f64;
    let vals: Vec<f64> = (0..=m).map(|i| f(-1.0 + h * i as f64)).collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * (v - top).exp();
    }
    top + (s * h / 3.0).ln()
}

/// Log-partition of `f(. | y_prev)` by a fine Simpson rule.
pub fn oracle_log_z(model: &dyn EnergyModel, theta: &[f64], y_prev: f64) -> f64 {
    simpson_log_integral(|y| model.energy(theta, y, y_prev).unwrap(), 20_000)
}

/// Exact log-likelihood from the Simpson oracle.
pub fn oracle_loglik(model: &dyn EnergyModel, theta: &[f64], s: &SampleSet) -> f64 {
    s.transitions().map(|(p, y)| model.energy(theta, y, p).unwrap() - oracle_log_z(model, theta, p)).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
