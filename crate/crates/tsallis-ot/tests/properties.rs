//! Property-based checks of the deformed calculus and the divergence,
//! against grid searches and the deformed-logarithm dual route.

mod common;

use common::{conjugate_by_grid, divergence_dual_form};
use proptest::prelude::*;
use tsallis_ot::instances::{random_coupling, random_measure, seeded_rng};
use tsallis_ot::{
    f_q, f_q_star, f_q_star_prime, phi_q, q_exp, q_log, tsallis_divergence_weights, Coupling,
    QParam,
};

fn qparam() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(1.0),
        Just(1.2),
        Just(1.5),
        Just(2.0),
        1.0001f64..2.5f64,
    ]
}

fn simplex_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|mut v| {
        let total: f64 = v.iter().sum();
        for x in &mut v {
            *x /= total;
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn deformed_exp_inverts_deformed_log(
        order in prop_oneof![Just(1.0), 0.1f64..2.5],
        y in 0.1f64..10.0,
    ) {
        let back = q_exp(order, q_log(order, y).unwrap());
        prop_assert!((back - y).abs() <= 1e-12 * y.max(1.0));
    }

    #[test]
    fn deformed_log_is_additive_up_to_the_deformation(
        q in qparam(),
        x in 0.1f64..10.0,
        y in 0.1f64..10.0,
    ) {
        let order = 2.0 - q;
        let lhs = q_log(order, x * y).unwrap();
        let lx = q_log(order, x).unwrap();
        let ly = q_log(order, y).unwrap();
        let rhs = lx + ly + (q - 1.0) * lx * ly;
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn generator_is_convex_on_segments(
        q in qparam(),
        a in 0.0f64..10.0,
        c in 0.0f64..10.0,
        t in 0.01f64..0.99,
    ) {
        let q = QParam::new(q).unwrap();
        let b = t * a + (1.0 - t) * c;
        let chord = t * f_q(q, a).unwrap() + (1.0 - t) * f_q(q, c).unwrap();
        let mid = f_q(q, b).unwrap();
        let scale = chord.abs().max(mid.abs()).max(1.0);
        prop_assert!(mid <= chord + 1e-12 * scale);
    }

    #[test]
    fn per_unit_generator_is_increasing(
        q in qparam(),
        a in 1e-3f64..50.0,
        c in 1e-3f64..50.0,
    ) {
        let q = QParam::new(q).unwrap();
        let (lo, hi) = if a <= c { (a, c) } else { (c, a) };
        prop_assert!(phi_q(q, lo).unwrap() <= phi_q(q, hi).unwrap() + 1e-12);
    }

    // Concavity of phi_q holds exactly on 1 <= q <= 2 (the second
    // derivative carries a factor q - 2) and is expected to fail beyond.
    #[test]
    fn per_unit_generator_is_concave_up_to_order_two(
        q in prop_oneof![Just(1.0), Just(2.0), 1.0001f64..2.0],
        a in 1e-3f64..50.0,
        c in 1e-3f64..50.0,
        t in 0.01f64..0.99,
    ) {
        let q = QParam::new(q).unwrap();
        let b = t * a + (1.0 - t) * c;
        let chord = t * phi_q(q, a).unwrap() + (1.0 - t) * phi_q(q, c).unwrap();
        let mid = phi_q(q, b).unwrap();
        let scale = chord.abs().max(mid.abs()).max(1.0);
        prop_assert!(mid >= chord - 1e-12 * scale);
    }

    #[test]
    fn conjugate_matches_a_grid_search(
        q in prop_oneof![Just(1.0), 1.1f64..2.5],
        y in -0.5f64..2.0,
    ) {
        let qp = QParam::new(q).unwrap();
        let closed = f_q_star(qp, y);
        let grid = conjugate_by_grid(qp, y, 6.0, 8192);
        prop_assert!((closed - grid).abs() <= 1e-6, "q={q} y={y}: {closed} vs {grid}");
    }

    #[test]
    fn conjugate_pair_obeys_fenchel_young(
        q in qparam(),
        x in 0.0f64..10.0,
        y in -5.0f64..5.0,
    ) {
        let q = QParam::new(q).unwrap();
        prop_assert!(x * y <= f_q(q, x).unwrap() + f_q_star(q, y) + 1e-9);
    }

    #[test]
    fn divergence_agrees_with_the_dual_logarithm_form(
        q in qparam(),
        p in simplex_vec(6),
        r in simplex_vec(6),
    ) {
        let qp = QParam::new(q).unwrap();
        let direct = tsallis_divergence_weights(qp, &p, &r).unwrap();
        let dual = divergence_dual_form(q, &p, &r);
        let scale = direct.abs().max(1.0);
        prop_assert!((direct - dual).abs() <= 1e-12 * scale);
    }

    #[test]
    fn divergence_is_jointly_convex(
        q in qparam(),
        p1 in simplex_vec(5),
        p2 in simplex_vec(5),
        r1 in simplex_vec(5),
        r2 in simplex_vec(5),
        t in 0.0f64..1.0,
    ) {
        let q = QParam::new(q).unwrap();
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| t * x + (1.0 - t) * y).collect()
        };
        let lhs = tsallis_divergence_weights(q, &mix(&p1, &p2), &mix(&r1, &r2)).unwrap();
        let rhs = t * tsallis_divergence_weights(q, &p1, &r1).unwrap()
            + (1.0 - t) * tsallis_divergence_weights(q, &p2, &r2).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn divergence_is_nonnegative_and_zero_only_at_equality(
        q in qparam(),
        p in simplex_vec(5),
    ) {
        let q = QParam::new(q).unwrap();
        prop_assert!(tsallis_divergence_weights(q, &p, &p).unwrap().abs() <= 1e-12);
        let r = vec![0.2; 5];
        prop_assert!(tsallis_divergence_weights(q, &p, &r).unwrap() >= -1e-12);
    }

    #[test]
    fn disintegration_roundtrips_random_couplings(
        seed in 0u64..4096,
        m in 2usize..6,
        n in 2usize..6,
    ) {
        let mut rng = seeded_rng(seed);
        let mu = random_measure(&mut rng, m, 1);
        let nu = random_measure(&mut rng, n, 1);
        let pi = random_coupling(&mut rng, &mu, &nu, 4);
        let (rows, kernel) = pi.disintegrate();
        let back = Coupling::recompose(&rows, &kernel, pi.right()).unwrap();
        for (a, b) in pi.weights().iter().zip(back.weights().iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn generator_tends_to_the_entropy_generator_as_q_drops_to_one() {
    let points = [0.3, 0.7, 1.9, 4.2];
    for &x in &points {
        let target = x * (x as f64).ln();
        let mut prev = f64::INFINITY;
        for delta in [0.1, 0.01, 0.001] {
            let q = QParam::new(1.0 + delta).unwrap();
            let err = (f_q(q, x).unwrap() - target).abs();
            assert!(
                err < prev,
                "x={x} delta={delta}: error {err} did not shrink from {prev}"
            );
            prev = err;
        }
        assert!(prev <= 2e-2, "x={x}: residual {prev} too large at delta=1e-3");
    }
}

#[test]
fn conjugate_value_and_slope_are_one_at_one() {
    for q in [1.0, 1.2, 1.5, 2.0, 2.5] {
        let q = QParam::new(q).unwrap();
        assert!((f_q_star(q, 1.0) - 1.0).abs() <= 1e-12);
        assert!((f_q_star_prime(q, 1.0) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn deformed_log_tends_to_the_natural_one() {
    for y in [0.5, 2.0, 10.0] {
        let mut prev = f64::INFINITY;
        for delta in [0.1, 0.01, 0.001] {
            let err = (q_log(1.0 + delta, y).unwrap() - (y as f64).ln()).abs();
            assert!(err < prev, "y={y} delta={delta}");
            prev = err;
        }
        assert!(prev <= 1e-2 * (y as f64).ln().abs().max(1.0));
    }
}
