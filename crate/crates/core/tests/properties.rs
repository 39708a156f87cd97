use proptest::prelude::*;

use slwlab::experiments::{fit_loglog_slope, select_lambda};
use slwlab::model::{ModelParams, Sign};
use slwlab::ode;
use slwlab::report::fmt17;
use slwlab::spectral::{bump, sobolev_norm, Grid1D, SobolevOrder};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_recovers_power_laws(c in 0.01f64..100.0, p in -3.0f64..3.0, x0 in 0.1f64..10.0, n in 3usize..12) {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| {
            let x = x0 * 1.7f64.powi(i as i32);
            (x, c * x.powf(p))
        }).collect();
        let f = fit_loglog_slope(&pts).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-9);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        prop_assert!(f.residual < 1e-9);
    }

    #[test]
    fn exponent_identities(k in 0.0f64..4.0, l in 1.0f64..6.0) {
        prop_assume!(k + l > 1.05);
        let p = ModelParams::defocusing(k, l).unwrap();
        let e = p.exponents();
        prop_assert!((e.s_c - 0.5 - e.alpha).abs() < 1e-14);
        prop_assert!(e.alpha < 1.0);
    }

    #[test]
    fn lambda_is_below_gamma(s in -1.0f64..0.5, eps in 0.01f64..1.0, gamma in 1e-3f64..1.0) {
        let p = ModelParams::defocusing(0.0, 3.0).unwrap();
        let c = select_lambda(&p, s, eps, gamma).unwrap();
        prop_assert!(c.sigma > 1.0);
        prop_assert!(c.lambda <= gamma);
        let smaller = select_lambda(&p, s, eps / 2.0, gamma).unwrap();
        prop_assert!(smaller.lambda < c.lambda);
    }

    #[test]
    fn norms_are_absolutely_homogeneous(c in -5.0f64..5.0, s in -0.4f64..2.0, hom in any::<bool>()) {
        let g = Grid1D::new(16.0, 512).unwrap();
        let f = bump(g, 0.3, 1.2, 1.0).unwrap();
        let ord = if hom { SobolevOrder::homogeneous(s) } else { SobolevOrder::inhomogeneous(s) };
        let a = sobolev_norm(&f.scaled(c), &ord).unwrap();
        let b = c.abs() * sobolev_norm(&f, &ord).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
    }

    #[test]
    fn defocusing_trajectories_are_monotone(k in 0.0f64..2.5, l in 1.0f64..4.0) {
        prop_assume!(k + l > 1.1);
        let p = ModelParams::new(k, l, 1, Sign::Defocusing).unwrap();
        let t = ode::integrate_base(&p, 20.0, 1e-9).unwrap();
        // near a plateau the increments fall below the integration error
        // (tolerance 1e-9), so order is only checked to ten times that
        for w in t.u.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8 * (1.0 + w[0].abs()));
        }
        for v in &t.u_t {
            prop_assert!(*v >= 0.0 && *v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn seventeen_digits_roundtrip(x in any::<f64>()) {
        prop_assume!(x.is_finite());
        prop_assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
    }
}
