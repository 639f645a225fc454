mod common;

use common::*;
use poisson_transform::chain::{run_benchmark, sample_chain, BenchmarkConfig, BenchmarkRow, Method, PenaltyChoice};
use poisson_transform::rng::stream;
use poisson_transform::{EnergyModel, ToyChain, ToyIid};

/// `F(y | prev)` by composite Simpson over `[-1, y]`, normalised by the full integral.
fn oracle_cdf(model: &dyn EnergyModel, theta: &[f64], prev: f64, y: f64) -> f64 {
    let mass = |hi: f64| {
        let m = 800;
        let h = (hi + 1.0) / m as f64;
        let f = |x: f64| model.energy(theta, x, prev).unwrap().exp();
        let mut s = f(-1.0) + f(hi);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(-1.0 + h * i as f64);
        }
        s * h / 3.0
    };
    mass(y) / mass(1.0)
}

/// Kolmogorov-Smirnov distance of `u` from Uniform(0, 1).
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn iid_draws_pass_ks_against_oracle() {
    let theta = [0.0, 6.0];
    let s = sample_chain(&ToyIid, &pv(&theta), 20_000, 0.0, &mut stream(31, &[])).unwrap();
    let u: Vec<f64> = s.points().iter().map(|&y| oracle_cdf(&ToyIid, &theta, 0.0, y)).collect();
    let d = ks_uniform(u);
    assert!(d <= 1.628 / (20_000f64).sqrt(), "KS distance {d}");
}

#[test]
fn chain_transitions_are_uniform_under_the_conditional_cdf() {
    let theta = [0.5, 20.0];
    let s = sample_chain(&ToyChain, &pv(&theta), 5000, 0.0, &mut stream(32, &[])).unwrap();
    let u: Vec<f64> = s.transitions().map(|(p, y)| oracle_cdf(&ToyChain, &theta, p, y)).collect();
    let d = ks_uniform(u);
    assert!(d <= 1.628 / (5000f64).sqrt(), "KS distance {d}");
}

#[test]
fn strong_coupling_makes_the_chain_persistent() {
    let s = chain_sample([0.0, 50.0], 3000, 33);
    let y = s.points();
    let m = mean(y);
    let num: f64 = y.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    assert!(num / den > 0.5, "lag-one autocorrelation {}", num / den);
}

fn small_config() -> BenchmarkConfig {
    BenchmarkConfig {
        n_values: vec![60, 120],
        k_values: vec![5],
        repetitions: 4,
        methods: Method::ALL.to_vec(),
        seed: 99,
        penalty: PenaltyChoice::CrossValidated { grid: vec![10.0, 0.1, 1e-3], folds: 3 },
        ..BenchmarkConfig::default()
    }
}

fn without_timing(rows: Vec<BenchmarkRow>) -> Vec<BenchmarkRow> {
    rows.into_iter().map(|r| BenchmarkRow { wall_time_ms: 0.0, ..r }).collect()
}

#[test]
fn benchmark_is_independent_of_thread_count() {
    let config = small_config();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        without_timing(pool.install(|| run_benchmark(&config).unwrap()))
    };
    let one = run(1);
    assert_eq!(one.len(), 4 * 2 * 4);
    assert_eq!(one, run(3));
}

#[test]
fn benchmark_parameters_follow_the_configuration() {
    let rows = run_benchmark(&small_config()).unwrap();
    for r in &rows {
        assert!((-1.0..=1.0).contains(&r.theta_true[0]) && (0.1..=10.0).contains(&r.theta_true[1]));
        assert_eq!(r.theta_hat.is_none(), r.failure.is_some());
    }
    let fixed = BenchmarkConfig { fixed_theta: Some([0.2, 3.0]), methods: vec![Method::Ml], ..small_config() };
    let rows = run_benchmark(&fixed).unwrap();
    assert!(rows.iter().all(|r| r.theta_true == [0.2, 3.0] && r.method == Method::Ml));
    let other = run_benchmark(&BenchmarkConfig { seed: 100, ..small_config() }).unwrap();
    assert_ne!(without_timing(other), without_timing(run_benchmark(&small_config()).unwrap()));
}
