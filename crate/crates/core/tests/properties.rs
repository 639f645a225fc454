mod common;

use common::*;
use poisson_transform::chain::{draw_theta, summarize, BenchmarkConfig, BenchmarkRow, Method};
use poisson_transform::model::{uniform_reference, EnergyModel};
use poisson_transform::ncd::{build_dataset, ncd_objective};
use poisson_transform::objective::{m_grad, m_hessian, m_objective, nu_star};
use poisson_transform::quadrature::{exact_loglik, exact_loglik_grad, exact_loglik_hessian, gauss_legendre, log_partition};
use poisson_transform::rng::stream;
use poisson_transform::{Domain, ToyChain, ToyIid};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    -1.0f64..=1.0
}

fn theta_box() -> impl Strategy<Value = [f64; 2]> {
    (-3.0f64..3.0, 0.0f64..60.0).prop_map(|(a, b)| [a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn energy_gradient_matches_central_differences(
        t1 in -5.0f64..5.0, t2 in -10.0f64..60.0, y in unit(), p in unit()
    ) {
        for model in [&ToyChain as &dyn EnergyModel, &ToyIid] {
            let g = model.grad_theta(&[t1, t2], y, p).unwrap();
            let num = fd(|x| model.energy(x, y, p).unwrap(), &[t1, t2]);
            prop_assert!(rel_err(&dv(&g), &num) <= 1e-6);
        }
    }

    #[test]
    fn energy_is_linear_in_theta(
        a in theta_box(), b in theta_box(), s in -2.0f64..2.0, r in -2.0f64..2.0, y in unit(), p in unit()
    ) {
        let f = |t: &[f64]| ToyChain.energy(t, y, p).unwrap();
        let mix = [s * a[0] + r * b[0], s * a[1] + r * b[1]];
        let lhs = f(&mix);
        let rhs = s * f(&a) + r * f(&b);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn energy_equals_theta_dot_statistics(t in theta_box(), y in unit(), p in unit()) {
        let g = ToyChain.grad_theta(&t, y, p).unwrap();
        let dot = t[0] * g[0] + t[1] * g[1];
        prop_assert_eq!(ToyChain.energy(&t, y, p).unwrap(), dot);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_partition_is_converged_at_401_nodes(t1 in -5.0f64..5.0, t2 in -100.0f64..=100.0, p in unit()) {
        let r401 = gauss_legendre(401, Domain::symmetric_unit()).unwrap();
        let r801 = gauss_legendre(801, Domain::symmetric_unit()).unwrap();
        let a = log_partition(&ToyChain, &pv(&[t1, t2]), p, &r401).unwrap().value();
        let b = log_partition(&ToyChain, &pv(&[t1, t2]), p, &r801).unwrap().value();
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }

    #[test]
    fn loglik_is_concave_along_segments(a in theta_box(), b in theta_box(), seed in 0u64..1000) {
        let s = chain_sample([-0.3, 4.0], 40, seed);
        let rule = rule();
        let l = |t: [f64; 2]| exact_loglik(&ToyChain, &pv(&t), &s, &rule).unwrap();
        let (la, lb) = (l(a), l(b));
        for i in 1..10 {
            let w = i as f64 / 10.0;
            let p = [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]];
            let chord = (1.0 - w) * la + w * lb;
            prop_assert!(l(p) >= chord - 1e-9 * (1.0 + chord.abs()));
        }
    }

    #[test]
    fn loglik_hessian_is_symmetric_nsd(t in theta_box(), seed in 0u64..1000) {
        let s = chain_sample([0.2, 3.0], 30, seed);
        let h = exact_loglik_hessian(&ToyChain, &pv(&t), &s, &rule()).unwrap();
        prop_assert!((h[(0, 1)] - h[(1, 0)]).abs() <= 1e-12 * (1.0 + h[(0, 1)].abs()));
        let eig = h.symmetric_eigen().eigenvalues;
        prop_assert!(eig.max() <= 1e-8, "{eig:?}");
    }

    #[test]
    fn loglik_gradient_matches_central_differences(t in theta_box(), seed in 0u64..1000) {
        let s = chain_sample([-0.5, 6.0], 25, seed);
        let rule = rule();
        let g = exact_loglik_grad(&ToyChain, &pv(&t), &s, &rule).unwrap();
        let num = fd(|x| exact_loglik(&ToyChain, &pv(x), &s, &rule).unwrap(), &t);
        prop_assert!(rel_err(&dv(&g), &num) <= 1e-6);
    }

    #[test]
    fn m_at_nu_star_is_loglik_minus_n(t in theta_box(), seed in 0u64..1000) {
        let s = iid_sample([0.5, 4.0], 100, seed);
        let rule = rule();
        let theta = pv(&t);
        let nu = nu_star(&ToyIid, &theta, s.initial(), &rule).unwrap();
        let m = m_objective(&ToyIid, &theta, nu, &s, &rule).unwrap();
        let l = exact_loglik(&ToyIid, &theta, &s, &rule).unwrap();
        prop_assert!((m - (l - 100.0)).abs() <= 1e-9);
        for d in [-0.5, 0.5] {
            prop_assert!(m_objective(&ToyIid, &theta, nu + d, &s, &rule).unwrap() < m);
        }
    }

    #[test]
    fn m_gradient_and_nu_curvature(t in theta_box(), nu in -3.0f64..3.0, seed in 0u64..1000) {
        let s = iid_sample([-0.5, 2.0], 50, seed);
        let rule = rule();
        let g = m_grad(&ToyIid, &pv(&t), nu, &s, &rule).unwrap();
        let x = [t[0], t[1], nu];
        let num = fd(|x| m_objective(&ToyIid, &pv(&x[..2]), x[2], &s, &rule).unwrap(), &x);
        prop_assert!(rel_err(&dv(&g), &num) <= 1e-6);
        let h = m_hessian(&ToyIid, &pv(&t), nu, &s, &rule).unwrap();
        prop_assert!(h[(2, 2)] < 0.0);
    }

    #[test]
    fn every_dataset_has_k_negatives_per_ancestor(n in 1usize..40, k in 1usize..15, seed in any::<u64>()) {
        let s = chain_sample([0.0, 1.0], n, seed % 1000);
        let q = uniform_reference(Domain::symmetric_unit());
        let data = build_dataset(&s, &q, k, &mut stream(seed, &[1])).unwrap();
        prop_assert_eq!(data.points().len(), n * (k + 1));
        let mut pos = vec![0usize; n];
        let mut neg = vec![0usize; n];
        for p in data.points() {
            if p.z { pos[p.ancestor_index] += 1 } else { neg[p.ancestor_index] += 1 }
        }
        prop_assert!(pos.iter().all(|&c| c == 1));
        prop_assert!(neg.iter().all(|&c| c == k));
    }

    #[test]
    fn iid_ncd_objective_is_concave_along_segments(
        a in (-3.0f64..3.0, -5.0f64..30.0, -3.0f64..3.0),
        b in (-3.0f64..3.0, -5.0f64..30.0, -3.0f64..3.0),
        seed in 0u64..1000,
    ) {
        let s = iid_sample([0.3, 3.0], 60, seed);
        let q = uniform_reference(Domain::symmetric_unit());
        let data = build_dataset(&s, &q, 5, &mut stream(seed, &[2])).unwrap();
        let r = |p: (f64, f64, f64)| ncd_objective(&ToyIid, &pv(&[p.0, p.1]), p.2, &data).unwrap();
        let (ra, rb) = (r(a), r(b));
        for i in 1..10 {
            let w = i as f64 / 10.0;
            let p = ((1.0 - w) * a.0 + w * b.0, (1.0 - w) * a.1 + w * b.1, (1.0 - w) * a.2 + w * b.2);
            let chord = (1.0 - w) * ra + w * rb;
            prop_assert!(r(p) >= chord - 1e-9 * (1.0 + chord.abs()));
        }
    }

    #[test]
    fn drawn_parameters_lie_in_the_configured_box(seed in any::<u64>(), rep in 0usize..1000) {
        let config = BenchmarkConfig { seed, ..BenchmarkConfig::default() };
        let t = draw_theta(&config, rep);
        prop_assert!((-1.0..=1.0).contains(&t[0]));
        prop_assert!((0.1..=10.0).contains(&t[1]));
    }

    #[test]
    fn summary_matches_brute_force_aggregation(
        errs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, any::<bool>()), 1..30)
    ) {
        let rows: Vec<BenchmarkRow> = errs
            .iter()
            .enumerate()
            .map(|(i, &(e1, e2, ok))| BenchmarkRow {
                method: if i % 2 == 0 { Method::Ml } else { Method::NcdSemi },
                n: 100,
                k: 10,
                rep: i,
                theta_true: [0.5, 2.0],
                theta_hat: ok.then_some([0.5 + e1, 2.0 + e2]),
                wall_time_ms: 0.0,
                failure: (!ok).then(|| "x".to_string()),
            })
            .collect();
        for row in summarize(&rows) {
            let errs: Vec<[f64; 2]> = rows
                .iter()
                .filter(|r| r.method == row.method)
                .filter_map(|r| r.theta_hat.map(|h| [h[0] - 0.5, h[1] - 2.0]))
                .collect();
            let failures = rows.iter().filter(|r| r.method == row.method && r.theta_hat.is_none()).count();
            prop_assert_eq!(row.count, errs.len());
            prop_assert_eq!(row.failures, failures);
            for j in 0..2 {
                let col: Vec<f64> = errs.iter().map(|e| e[j]).collect();
                if col.is_empty() {
                    continue;
                }
                let bias = mean(&col);
                let rmse = (col.iter().map(|e| e * e).sum::<f64>() / col.len() as f64).sqrt();
                prop_assert!((row.bias[j] - bias).abs() <= 1e-12);
                prop_assert!((row.rmse[j] - rmse).abs() <= 1e-12);
            }
        }
    }
}
