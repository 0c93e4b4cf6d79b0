use std::f64::consts::{PI, TAU};

use floquet_gerbe::atlas::build_circle_atlas;
use floquet_gerbe::floquet::monodromy_eigenpairs;
use floquet_gerbe::gerbe::GaugeFunction;
use floquet_gerbe::linalg::{cis, max_abs_diff, unitarity_deviation};
use floquet_gerbe::numerics::{interpolate, unwrap, wrap_pi, wrap_tau};
use floquet_gerbe::{floquet_decompose, quasienergy_state, CMatrix, FloquetSystem, KickedTwoLevelModel, C64};
use proptest::prelude::*;

fn kick_vector(a: f64, b: f64) -> [C64; 2] {
    [C64::new(a.cos(), 0.0), cis(b) * a.sin()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kick_is_dyson_resummed_projector(lambda in -20.0..20.0f64, a in 0.0..PI, b in -PI..PI) {
        let m = KickedTwoLevelModel::with_kick_vector(1.0, 1.0, kick_vector(a, b)).unwrap();
        let w = m.projector();
        let expected = CMatrix::identity(2, 2) + w * (cis(-lambda) - C64::new(1.0, 0.0));
        let k = m.kick_unitary(lambda);
        prop_assert!(max_abs_diff(k.matrix(), &expected) < 1e-12);
        prop_assert!(k.deviation() < 1e-12);
    }

    #[test]
    fn monodromy_is_unitary_and_2pi_periodic(lambda in -20.0..20.0f64, w0 in 0.2..3.0f64, w1 in 0.1..3.0f64) {
        let m = KickedTwoLevelModel::new(w0, w1).unwrap();
        let u = m.monodromy(lambda);
        prop_assert!(unitarity_deviation(u.matrix()) < 1e-12);
        prop_assert!(u.max_abs_diff(&m.monodromy(lambda + TAU)) < 1e-11);
    }

    #[test]
    fn eigenpairs_diagonalize_monodromy(lambda in 0.1..6.0f64, w0 in 0.3..2.0f64) {
        let m = KickedTwoLevelModel::new(w0, 1.0).unwrap();
        let u = m.monodromy(lambda);
        if let Ok(pairs) = monodromy_eigenpairs(&u) {
            for p in &pairs {
                prop_assert!((0.0..TAU).contains(&p.mu_phase));
                let lhs = u.apply(&p.vector);
                let rhs = &p.vector * cis(-p.mu_phase);
                prop_assert!((lhs - rhs).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn floquet_reconstruction_and_state_norm(lambda in 0.1..6.0f64, w0 in 0.5..2.0f64, block in -3i64..3) {
        let m = KickedTwoLevelModel::new(w0, 1.0).unwrap();
        let prop = m.propagator_samples(lambda, 64).unwrap();
        if let Ok(d) = floquet_decompose(&prop, w0) {
            for k in [0, 17, 63] {
                prop_assert!(max_abs_diff(&d.reconstruct(k), prop.samples()[k].matrix()) < 1e-10);
            }
            let s = quasienergy_state(&d, 0, block).unwrap();
            prop_assert!(s.pointwise_norm_deviation() < 1e-12);
            prop_assert!((s.extended_norm() - 1.0).abs() < 1e-12);
            let chi = d.quasienergy(0);
            prop_assert!((0.0..w0).contains(&chi));
        }
    }

    #[test]
    fn wrapping_is_idempotent(x in -100.0..100.0f64) {
        let p = wrap_pi(x);
        prop_assert!(p > -PI - 1e-12 && p <= PI + 1e-12);
        prop_assert!((wrap_pi(p) - p).abs() < 1e-12);
        let t = wrap_tau(x);
        prop_assert!((0.0..TAU).contains(&t));
        prop_assert!(((x - t) / TAU - ((x - t) / TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn unwrap_recovers_smooth_phase(slope in -2.0..2.0f64, offset in -3.0..3.0f64) {
        let exact: Vec<f64> = (0..200).map(|k| offset + slope * k as f64 * 0.1).collect();
        let wrapped: Vec<f64> = exact.iter().map(|&x| wrap_pi(x)).collect();
        let un = unwrap(&wrapped);
        let shift = un[0] - exact[0];
        prop_assert!((shift / TAU - (shift / TAU).round()).abs() < 1e-12);
        for (u, e) in un.iter().zip(&exact) {
            prop_assert!((u - e - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_exact_for_quintics(c in prop::collection::vec(-1.0..1.0f64, 6), x in 0.0..3.0f64) {
        let poly = |t: f64| c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci);
        let values: Vec<f64> = (0..31).map(|k| poly(k as f64 * 0.1)).collect();
        prop_assert!((interpolate(&values, 0.0, 0.1, x) - poly(x)).abs() < 1e-9);
    }

    #[test]
    fn gauge_derivative_matches_difference(
        amp in -1.0..1.0f64, freq in 0.1..2.0f64, phase in -3.0..3.0f64, x in -5.0..5.0f64
    ) {
        let g = GaugeFunction { constant: 0.3, modes: vec![(amp, freq, phase)] };
        let h = 1e-5;
        let fd = (g.value(x + h) - g.value(x - h)) / (2.0 * h);
        prop_assert!((fd - g.derivative(x)).abs() < 1e-7);
    }

    #[test]
    fn chart_coordinates_round_trip(shift in -3.0..3.0f64, x in 0.0..12.0f64) {
        let atlas = build_circle_atlas(4.0 * PI, &[(-PI + shift, PI + shift), (shift, 3.0 * PI + shift), (2.0 * PI + shift, 4.0 * PI + shift)]).unwrap();
        for c in 0..3 {
            if let Some(l) = atlas.to_chart(c, x) {
                prop_assert!(atlas.charts[c].contains(l));
                let k = (l - x) / (4.0 * PI);
                prop_assert!((k - k.round()).abs() < 1e-12);
            }
        }
    }
}
