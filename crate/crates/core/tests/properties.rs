use ancova_cp::design::TwoStageConfig;
use ancova_cp::selection::{classify, coverage_indicator, f_statistics};
use ancova_cp::{
    build_geometry, critical_values, AncovaLayout, ConditionalKernel, ContrastSpec, DesignFile, GeometryBundle, Region,
    ScaledSufficientStats,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn reference() -> (GeometryBundle, TwoStageConfig) {
    let d = DesignFile::reference();
    (
        build_geometry(&d.layout, &d.contrast).unwrap(),
        critical_values(&d.layout, 0.05, 0.1, 0.1).unwrap(),
    )
}

fn layout_strategy() -> impl Strategy<Value = AncovaLayout> {
    (2usize..=4)
        .prop_flat_map(|k| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3..=6), k))
        .prop_filter_map("covariate spread", |x| {
            let spread = x.iter().all(|g| {
                let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                hi - lo > 1.0
            });
            if spread {
                AncovaLayout::new(x).ok()
            } else {
                None
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geometry_invariants(layout in layout_strategy()) {
        let contrast = ContrastSpec::difference_at_extreme(&layout, 0, 1).unwrap();
        let g = build_geometry(&layout, &contrast).unwrap();
        let tol = 1e-10 * g.xtx_inv.amax().max(1.0);
        prop_assert!((&g.g_tau * &g.g_tau - &g.g_tau).amax() < 1e-8);
        prop_assert!((&g.g_xi * &g.g_xi - &g.g_xi).amax() < 1e-8);
        prop_assert!((&g.g_tau * &g.xtx_inv * &g.c_tau).amax() < tol);
        prop_assert!((&g.g_xi * &g.xtx_inv * &g.c_xi).amax() < tol);
        prop_assert!(g.v_star > 0.0 && g.v_star <= g.v11 * (1.0 + 1e-12));
        prop_assert!(g.w_star > 0.0 && g.w_star <= g.v11 * (1.0 + 1e-12));
        prop_assert!(g.cond_var_xi > 0.0);
        let v = DVector::from_fn(2 * g.k, |i, _| (i as f64 * 0.37).sin());
        let lhs = g.c_xi.transpose() * &v;
        let rhs = &g.u * (g.c_tau.transpose() * &v);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn conditional_cp_is_a_probability(
        slopes in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform3(-2.0f64..2.0),
        d in 0.01f64..80.0,
    ) {
        let (g, cfg) = reference();
        let kern = ConditionalKernel::new(&g, &cfg, &slopes).unwrap();
        let ps = [kern.p_tau(&q, d).unwrap(), kern.p_xi(&q, d).unwrap(), kern.p_full(&q, d).unwrap()];
        prop_assert!(ps.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(ps.iter().filter(|p| **p != 0.0).count() <= 1);
        let total = kern.conditional_cp(&q, d).unwrap();
        prop_assert_eq!(total, ps.iter().sum::<f64>());
    }

    #[test]
    fn regions_partition(f_tau in 0.0f64..6.0, f_xi in 0.0f64..6.0) {
        let (_, cfg) = reference();
        let r = classify(f_tau, f_xi, &cfg);
        let a = f_tau <= cfg.l_tau;
        let b = !a && f_xi <= cfg.l_xi;
        prop_assert_eq!(r == Region::A, a);
        prop_assert_eq!(r == Region::B, b);
        prop_assert_eq!(r == Region::C, !a && !b);
    }

    #[test]
    fn f_tau_increases_with_q(q in prop::array::uniform3(-1.0f64..1.0), d in 1.0f64..40.0, s in 1.01f64..5.0) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        let (g, _) = reference();
        let stats = |q: &[f64]| {
            let gamma_hat: Vec<f64> = [0.0; 3].iter().chain(q).copied().collect();
            ScaledSufficientStats::new(gamma_hat, d).unwrap()
        };
        let (f1, _) = f_statistics(&stats(&q), &g).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        let (f2, _) = f_statistics(&stats(&scaled), &g).unwrap();
        prop_assert!(f2 > f1);
    }

    /// Shifting the intercept parts of `γ` and `γ̂` together leaves the
    /// indicator unchanged. Values are multiples of 2⁻¹⁰ so that the
    /// shifted differences are exact.
    #[test]
    fn indicator_ignores_common_intercept_shift(
        gi in prop::array::uniform6(-512i32..512),
        dev in prop::array::uniform6(-256i32..256),
        shift in prop::array::uniform3(-4096i32..4096),
        d in 1.0f64..40.0,
    ) {
        let (g, cfg) = reference();
        let unit = 1.0 / 1024.0;
        let gamma: Vec<f64> = gi.iter().map(|v| *v as f64 * unit).collect();
        let gamma_hat: Vec<f64> = gi.iter().zip(&dev).map(|(a, b)| (a + b) as f64 * unit).collect();
        let shifted = |v: &[f64]| -> Vec<f64> {
            v.iter().enumerate().map(|(i, x)| if i < 3 { x + shift[i] as f64 * unit } else { *x }).collect()
        };
        let base = coverage_indicator(&ScaledSufficientStats::new(gamma_hat.clone(), d).unwrap(), &g, &cfg, &gamma).unwrap();
        let moved = coverage_indicator(
            &ScaledSufficientStats::new(shifted(&gamma_hat), d).unwrap(), &g, &cfg, &shifted(&gamma),
        ).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn critical_values_are_monotone(s1 in 0.01f64..0.98, ds in 0.001f64..0.01) {
        let d = DesignFile::reference();
        let lo = critical_values(&d.layout, 0.05, s1, s1).unwrap();
        let hi = critical_values(&d.layout, 0.05, s1 + ds, s1 + ds).unwrap();
        prop_assert!(hi.l_tau < lo.l_tau);
        prop_assert!(hi.l_xi < lo.l_xi);
    }
}
