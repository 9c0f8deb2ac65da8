use nalgebra::{DMatrix, DVector};
use perceived_returns::mi::{q_statistic, MomentSet};
use perceived_returns::stats::{cdf, cholesky, inverse_mills, normal_cdf, Tail};
use perceived_returns::*;
use proptest::prelude::*;
use std::sync::OnceLock;

fn sim2_small() -> &'static Sample64 {
    static S: OnceLock<Sample64> = OnceLock::new();
    S.get_or_init(|| {
        let (spec, _) = builtin_scenario("sim2").unwrap();
        generate(&spec.with_n(400).with_seed(5, 0)).unwrap()
    })
}

fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &DVector<f64>) -> Result<(), TestCaseError> {
    for j in 0..x.len() {
        let h = 1e-5 * (1.0 + x[j].abs());
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[j] += h;
        dn[j] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        prop_assert!((fd - grad[j]).abs() <= 1e-5 * grad[j].abs().max(1.0), "coord {j}: fd {fd} analytic {}", grad[j]);
    }
    Ok(())
}

/// Independent unconstrained probit by Fisher scoring on `[X, −Price]`.
fn scoring_probit(data: &Dataset64) -> DVector<f64> {
    let n = data.n();
    let k = data.k();
    let d = DMatrix::from_fn(n, k + 1, |i, j| if j < k { data.x()[(i, j)] } else { -data.price()[i] });
    let mut b = DVector::zeros(k + 1);
    for _ in 0..100 {
        let eta = &d * &b;
        let mut g = DVector::zeros(k + 1);
        let mut info = DMatrix::zeros(k + 1, k + 1);
        for i in 0..n {
            let p = cdf(eta[i]).clamp(1e-300, 1.0 - 1e-16);
            let phi = (-0.5 * eta[i] * eta[i]).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let y = if data.s()[i] { 1.0 } else { 0.0 };
            let row = d.row(i).transpose();
            g += &row * (phi * (y - p) / (p * (1.0 - p)));
            info += &row * row.transpose() * (phi * phi / (p * (1.0 - p)));
        }
        let step = info.cholesky().unwrap().solve(&g);
        b += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn probit_gradient_matches_differences(t0 in -2.0f64..3.0, lg in -2.5f64..0.5) {
        let data = &sim2_small().data;
        let x = [t0, lg.exp()];
        let ll = probit_loglik(&DVector::from_vec(vec![x[0]]), x[1], data);
        fd_check(|v| probit_loglik(&DVector::from_vec(vec![v[0]]), v[1], data).value, &x, &ll.gradient)?;
    }

    #[test]
    fn cf_gradient_matches_differences(t0 in -2.0f64..3.0, lg in -2.5f64..0.5, r in -0.5f64..0.5) {
        let data = &sim2_small().data;
        let z2 = data.excluded_instruments()[1];
        let u = fit_first_stage(data, &[z2]).unwrap().residuals;
        let x = [t0, lg.exp(), r];
        let ll = cf_loglik(&DVector::from_vec(vec![x[0]]), x[1], x[2], data, &u);
        fd_check(|v| cf_loglik(&DVector::from_vec(vec![v[0]]), v[1], v[2], data, &u).value, &x, &ll.gradient)?;
    }

    #[test]
    fn cf_nests_probit(t0 in -2.0f64..3.0, g in 0.05f64..2.0) {
        let data = &sim2_small().data;
        let u = fit_first_stage(data, &data.excluded_instruments()).unwrap().residuals;
        let th = DVector::from_vec(vec![t0]);
        let a = probit_loglik(&th, g, data);
        let b = cf_loglik(&th, g, 0.0, data, &u);
        prop_assert!((a.value - b.value).abs() <= 1e-6);
        for j in 0..2 {
            prop_assert!((a.gradient[j] - b.gradient[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn first_stage_residuals_are_orthogonal(seed in 0u64..10_000, n in 150usize..600) {
        let (spec, _) = builtin_scenario("sim2").unwrap();
        let s: Sample64 = generate(&spec.with_n(n).with_seed(seed, 0)).unwrap();
        for subset in [vec![1], vec![2], vec![1, 2]] {
            let fs = fit_first_stage(&s.data, &subset).unwrap();
            let w = fs.design(&s.data);
            let dev = (w.transpose() * &fs.residuals).amax() / n as f64;
            prop_assert!(dev <= 1e-8, "{dev}");
            prop_assert!(fs.sigma_u2 > 0.0);
        }
    }

    #[test]
    fn all_slack_moments_give_zero_q(n in 20usize..200, l in 1usize..12, seed in 0u64..1000) {
        let mut rng = RngStream::new(seed, 0);
        let values = DMatrix::from_fn(n, l, |_, _| 0.1 + rng.standard_normal::<f64>().abs());
        let nn = n as f64;
        let means = DVector::from_fn(l, |c, _| values.column(c).sum() / nn);
        let sds = DVector::from_fn(l, |c, _| (values.column(c).iter().map(|v| (v - means[c]).powi(2)).sum::<f64>() / nn).sqrt());
        let ms = MomentSet { values, means, sds, labels: vec![String::new(); l], saturated_rows: 0 };
        prop_assert_eq!(q_statistic(&ms).unwrap().q, 0.0);
    }

    #[test]
    fn cdf_symmetry_and_mills_bounds(x in -38.0f64..38.0) {
        let s = normal_cdf(x).unwrap() + normal_cdf(-x).unwrap() - 1.0;
        prop_assert!(s.abs() <= 1e-14);
        let up = inverse_mills(x, Tail::Upper).unwrap();
        let lo = inverse_mills(-x, Tail::Lower).unwrap();
        prop_assert!(((up - lo) / up).abs() <= 1e-12);
        if x >= 1.0 {
            prop_assert!(x < up && up < x + 1.0 / x);
        }
    }

    #[test]
    fn cholesky_reconstructs_random_psd(seed in 0u64..10_000, dim in 1usize..6, rank in 1usize..6) {
        let mut rng = RngStream::new(seed, 1);
        let a = DMatrix::from_fn(dim, rank.min(dim), |_, _| rng.standard_normal::<f64>());
        let s = &a * a.transpose();
        let cov = CovarianceMatrix::new(s.clone()).unwrap();
        let l = cholesky(&cov).unwrap();
        let err = (&l * l.transpose() - &s).amax();
        prop_assert!(err <= 1e-8 * (1.0 + s.amax()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn probit_scale_equivariance(seed in 0u64..10_000, c in 0.2f64..5.0) {
        let (spec, _) = builtin_scenario("sim1").unwrap();
        let s: Sample64 = generate(&spec.with_n(2000).with_seed(seed, 0)).unwrap();
        let opts = FitOptions::default();
        let a = fit_probit(&s.data, &opts).unwrap();
        let scaled = s.data.with_scaled_price(c);
        let b = fit_probit(&scaled, &opts).unwrap();
        prop_assert!((b.sigma / (c * a.sigma) - 1.0).abs() <= 1e-6);
        for i in (0..2000).step_by(97) {
            let pa = model::selection_probability(&a.params(), &s.data, i, None);
            let pb = model::selection_probability(&b.params(), &scaled, i, None);
            prop_assert!((pa - pb).abs() <= 1e-6);
        }
    }

    #[test]
    fn constrained_fit_is_a_standard_probit(seed in 0u64..10_000) {
        let (spec, _) = builtin_scenario("sim2").unwrap();
        let s: Sample64 = generate(&spec.with_n(1500).with_seed(seed, 0)).unwrap();
        let fit = fit_probit(&s.data, &FitOptions::default()).unwrap();
        let b = scoring_probit(&s.data);
        prop_assert!((fit.theta_star[0] - b[0]).abs() <= 1e-6);
        prop_assert!((fit.gamma_star - b[1]).abs() <= 1e-6);
    }

    #[test]
    fn optimum_beats_the_truth(seed in 0u64..10_000, name in prop::sample::select(vec!["sim1", "sim2", "A2", "A6"])) {
        let (spec, t) = builtin_scenario(name).unwrap();
        let s: Sample64 = generate(&spec.with_n(1000).with_seed(seed, 0)).unwrap();
        let fit = fit_probit(&s.data, &FitOptions::default()).unwrap();
        let th = DVector::from_vec(t.theta_true.iter().map(|v| v / t.sigma_true).collect());
        let at_truth = probit_loglik(&th, 1.0 / t.sigma_true, &s.data).value;
        prop_assert!(fit.loglik >= at_truth - 1e-9);
    }

    #[test]
    fn hidden_latent_matches_choices(seed in 0u64..10_000, which in 0usize..9) {
        let name = dgp::SCENARIO_NAMES[which];
        let (spec, _) = builtin_scenario(name).unwrap();
        let s: Sample64 = generate(&spec.clone().with_n(500).with_seed(seed, 3)).unwrap();
        let h = s.hidden.as_ref().unwrap();
        for i in 0..500 {
            prop_assert_eq!(s.data.s()[i], h.pi[i] >= 0.0);
        }
        let again: Sample64 = generate(&spec.with_n(500).with_seed(seed, 3)).unwrap();
        prop_assert_eq!(&s, &again);
    }
}
