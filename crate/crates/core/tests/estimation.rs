mod common;

use common::*;
use poisson_transform::model::{EnergyModel, Restricted};
use poisson_transform::objective::{
    check_concavity, fit_poisson_chi, fit_poisson_joint, lambda_path, m_chi_objective, m_hessian, m_seq_objective,
    nu_star, PenaltyConfig,
};
use poisson_transform::quadrature::{exact_loglik, exact_loglik_grad, fit_ml, gauss_legendre, log_partition};
use poisson_transform::{Domain, Error, FitOptions, Kernel, KernelExpansion, NuEstimate, Result, SampleSet, ToyChain, ToyIid};

/// The toy chain plus a constant: same conditional densities.
struct Shifted(f64);

impl EnergyModel for Shifted {
    fn dim(&self) -> usize {
        2
    }
    fn domain(&self) -> Domain {
        Domain::symmetric_unit()
    }
    fn energy(&self, theta: &[f64], y: f64, y_prev: f64) -> Result<f64> {
        Ok(ToyChain.energy(theta, y, y_prev)? + self.0)
    }
    fn grad_into(&self, theta: &[f64], y: f64, y_prev: f64, out: &mut [f64]) -> Result<()> {
        ToyChain.grad_into(theta, y, y_prev, out)
    }
}

/// `f = sin(theta y)`: smooth but not an exponential family.
struct Wavy;

impl EnergyModel for Wavy {
    fn dim(&self) -> usize {
        1
    }
    fn domain(&self) -> Domain {
        Domain::symmetric_unit()
    }
    fn energy(&self, theta: &[f64], y: f64, _y_prev: f64) -> Result<f64> {
        Ok((theta[0] * y).sin())
    }
    fn grad_into(&self, theta: &[f64], y: f64, _y_prev: f64, out: &mut [f64]) -> Result<()> {
        out[0] = y * (theta[0] * y).cos();
        Ok(())
    }
}

fn tight() -> FitOptions {
    FitOptions { tol: 1e-10, ..FitOptions::default() }
}

#[test]
fn log_partition_matches_fine_rules() {
    let theta = pv(&[-2.0, 50.0]);
    let fine = gauss_legendre(2001, Domain::symmetric_unit()).unwrap();
    let a = log_partition(&ToyChain, &theta, 0.0, &rule()).unwrap().value();
    let b = log_partition(&ToyChain, &theta, 0.0, &fine).unwrap().value();
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    let c = oracle_log_z(&ToyChain, &[-2.0, 50.0], 0.0);
    assert!((a - c).abs() <= 1e-9, "{a} vs Simpson {c}");
}

#[test]
fn single_observation_loglik() {
    let s = SampleSet::new(Domain::symmetric_unit(), -0.4, vec![0.5]).unwrap();
    let l = exact_loglik(&ToyChain, &pv(&[1.0, 0.0]), &s, &rule()).unwrap();
    let exact = 0.5 - (std::f64::consts::E - (-1.0f64).exp()).ln();
    assert!((l - exact).abs() < 1e-12);
    assert!((l + 0.3544).abs() < 1e-3);
}

#[test]
fn constant_shift_leaves_loglik_unchanged() {
    let s = chain_sample([0.4, 7.0], 50, 4);
    let r = rule();
    for t in [[0.0, 0.0], [-1.0, 3.0], [2.0, 40.0]] {
        let a = exact_loglik(&ToyChain, &pv(&t), &s, &r).unwrap();
        let b = exact_loglik(&Shifted(3.7), &pv(&t), &s, &r).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn loglik_agrees_with_simpson_oracle() {
    let s = chain_sample([-0.7, 12.0], 40, 5);
    for t in [[-0.7, 12.0], [1.5, 0.5], [0.0, 55.0]] {
        let a = exact_loglik(&ToyChain, &pv(&t), &s, &rule()).unwrap();
        let b = oracle_loglik(&ToyChain, &t, &s);
        assert!((a - b).abs() <= 1e-8, "{t:?}: {a} vs {b}");
    }
}

#[test]
fn ml_recovers_the_truth_on_a_long_chain() {
    let s = chain_sample([0.0, 2.0], 4000, 21);
    let r = rule();
    let fit = fit_ml(&ToyChain, &s, &r, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    let se = fit.standard_errors().unwrap();
    for (i, truth) in [0.0, 2.0].iter().enumerate() {
        assert!((fit.theta_hat[i] - truth).abs() <= 3.0 * se[i], "component {i}: {} +- {}", fit.theta_hat[i], se[i]);
    }
    let at_hat = exact_loglik(&ToyChain, &fit.theta_hat, &s, &r).unwrap();
    let at_truth = exact_loglik(&ToyChain, &pv(&[0.0, 2.0]), &s, &r).unwrap();
    assert!(at_hat >= at_truth);
    let g = exact_loglik_grad(&ToyChain, &fit.theta_hat, &s, &r).unwrap();
    assert!(g.amax() <= 1e-6, "gradient at optimum {g}");
}

#[test]
fn poisson_joint_fit_reproduces_ml() {
    let model = Restricted::new(ToyIid, vec![None, Some(0.0)]).unwrap();
    let r = rule();
    for seed in 0..3 {
        let s = iid_sample([0.6, 0.0], 1000, 100 + seed);
        let ml = fit_ml(&model, &s, &r, &tight()).unwrap();
        let po = fit_poisson_joint(&model, &s, &r, &tight()).unwrap();
        assert!(po.converged);
        assert!((ml.theta_hat[0] - po.theta_hat[0]).abs() <= 1e-6);
        let l = exact_loglik(&model, &po.theta_hat, &s, &r).unwrap();
        assert!((po.objective - (l - 1000.0)).abs() <= 1e-8);
        let cm = po.covariance.unwrap();
        assert_eq!(cm.shape(), (1, 1));
        assert!(cm[(0, 0)] > 0.0);
    }
}

#[test]
fn covariance_from_m_matches_loglik_curvature() {
    let r = rule();
    for (seed, t) in [(1, [0.3, 4.0]), (2, [-0.8, 9.0]), (3, [0.0, 0.5])] {
        let s = iid_sample(t, 1000, seed);
        let ml = fit_ml(&ToyIid, &s, &r, &tight()).unwrap();
        let po = fit_poisson_joint(&ToyIid, &s, &r, &tight()).unwrap();
        let (cl, cm) = (ml.covariance.unwrap(), po.covariance.unwrap());
        for (a, b) in cm.iter().zip(cl.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs(), "{cm} vs {cl}");
        }
    }
}

#[test]
fn duplicated_data_halves_the_covariance() {
    let r = rule();
    let s = iid_sample([0.2, 3.0], 500, 9);
    let a = fit_poisson_joint(&ToyIid, &s, &r, &tight()).unwrap().covariance.unwrap();
    let b = fit_poisson_joint(&ToyIid, &s.duplicated(), &r, &tight()).unwrap().covariance.unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((y - 0.5 * x).abs() <= 1e-6 * x.abs());
    }
}

#[test]
fn seq_objective_at_nu_star() {
    let s = chain_sample([-0.5, 5.0], 60, 13);
    let r = rule();
    let theta = pv(&[0.2, 3.0]);
    let nus: Vec<f64> = s.ancestors().iter().map(|&p| nu_star(&ToyChain, &theta, p, &r).unwrap()).collect();
    let m = m_seq_objective(&ToyChain, &theta, &nus, &s, &r).unwrap();
    let l = exact_loglik(&ToyChain, &theta, &s, &r).unwrap();
    assert!((m - (l - 60.0)).abs() <= 1e-8);
}

#[test]
fn chi_interpolating_nu_star_attains_the_likelihood() {
    let s = chain_sample([-0.5, 5.0], 12, 17);
    let r = rule();
    let theta = pv(&[-0.3, 4.0]);
    let centers = s.ancestors();
    let targets: Vec<f64> = centers.iter().map(|&p| nu_star(&ToyChain, &theta, p, &r).unwrap()).collect();
    let kernel = Kernel::from_median(&centers).unwrap();
    let chi = KernelExpansion::interpolate(kernel, centers, &targets).unwrap();
    let m = m_chi_objective(&ToyChain, &theta, &chi, &PenaltyConfig::fixed(0.0).unwrap(), &s, &r).unwrap();
    let l = exact_loglik(&ToyChain, &theta, &s, &r).unwrap();
    assert!((m - (l - 12.0)).abs() <= 1e-7, "{m} vs {}", l - 12.0);
}

#[test]
fn huge_penalty_sends_chi_to_zero() {
    let s = chain_sample([-0.5, 5.0], 80, 18);
    let r = rule();
    let kernel = Kernel::from_median(&s.ancestors()).unwrap();
    let fit = fit_poisson_chi(&ToyChain, &s, &r, kernel, &PenaltyConfig::fixed(1e10).unwrap(), &FitOptions::default()).unwrap();
    let NuEstimate::Kernel(chi) = &fit.nu_hat else { panic!("expected a kernel estimate") };
    assert!(chi.alpha().iter().all(|a| a.abs() < 1e-6));
    let zeros = vec![0.0; s.len()];
    let seq = m_seq_objective(&ToyChain, &fit.theta_hat, &zeros, &s, &r).unwrap();
    let raw = m_chi_objective(&ToyChain, &fit.theta_hat, chi, &PenaltyConfig::fixed(0.0).unwrap(), &s, &r).unwrap();
    assert!((raw - seq).abs() < 1e-4);
}

#[test]
fn small_penalty_chi_fit_matches_ml() {
    let s = chain_sample([-0.5, 5.0], 500, 19);
    let r = rule();
    let ml = fit_ml(&ToyChain, &s, &r, &FitOptions::default()).unwrap();
    let kernel = Kernel::from_median(&s.ancestors()).unwrap();
    let chi = fit_poisson_chi(&ToyChain, &s, &r, kernel, &PenaltyConfig::fixed(1e-8).unwrap(), &FitOptions::default()).unwrap();
    for i in 0..2 {
        assert!((ml.theta_hat[i] - chi.theta_hat[i]).abs() <= 1e-3, "{:?} vs {:?}", ml.theta_hat, chi.theta_hat);
    }
}

#[test]
fn two_point_chi_interpolates_nu_star() {
    let model = Restricted::new(ToyChain, vec![None, Some(2.0)]).unwrap();
    let s = SampleSet::new(Domain::symmetric_unit(), 0.0, vec![0.4, -0.3]).unwrap();
    let r = rule();
    let kernel = Kernel::gaussian(0.5).unwrap();
    let fit = fit_poisson_chi(&model, &s, &r, kernel, &PenaltyConfig::fixed(0.0).unwrap(), &tight()).unwrap();
    assert!(fit.converged);
    let NuEstimate::Kernel(chi) = &fit.nu_hat else { panic!("expected a kernel estimate") };
    for p in s.ancestors() {
        let target = nu_star(&model, &fit.theta_hat, p, &r).unwrap();
        assert!((chi.eval(p) - target).abs() <= 1e-6, "at {p}: {} vs {target}", chi.eval(p));
    }
}

#[test]
fn lambda_path_rises_to_the_likelihood() {
    let s = chain_sample([-0.5, 5.0], 200, 23);
    let r = rule();
    let kernel = Kernel::from_median(&s.ancestors()).unwrap();
    let path = lambda_path(&ToyChain, &s, &r, kernel, &[10.0, 1.0, 0.1, 0.01, 1e-4, 1e-6]).unwrap();
    assert_eq!(path.len(), 6);
    assert!(path.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-8), "{path:?}");
    let ml = fit_ml(&ToyChain, &s, &r, &FitOptions::default()).unwrap();
    let target = exact_loglik(&ToyChain, &ml.theta_hat, &s, &r).unwrap() - 200.0;
    assert!((path[5].1 - target).abs() <= 1e-4, "{} vs {target}", path[5].1);
    let one = lambda_path(&ToyChain, &s, &r, kernel, &[0.5]).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn joint_hessian_is_negative_definite() {
    let s = iid_sample([0.3, 3.0], 200, 29);
    let r = rule();
    let mut rng = poisson_transform::rng::stream(29, &[5]);
    use rand::Rng;
    let thetas: Vec<_> = (0..50).map(|_| pv(&[rng.random_range(-3.0..3.0), rng.random_range(0.0..60.0)])).collect();
    let nus: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
    let report = check_concavity(&ToyIid, &thetas, &nus, &s, &r).unwrap();
    assert!(report.all_pass, "{:?}", report.max_eigenvalues);
    let h = m_hessian(&ToyIid, &pv(&[0.0, 0.0]), 0.0, &s, &r).unwrap();
    assert!((h[(2, 2)] + 400.0).abs() < 1e-9);
    assert_eq!(check_concavity(&Wavy, &[pv(&[1.0])], &[0.0], &s, &r).unwrap_err(), Error::MissingSufficientStatistics);
}
