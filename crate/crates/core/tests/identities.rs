//! Cross-module identity checks: closed forms reached through the
//! reparameterization ladder, inversion and shift rules, and the
//! coisometry collapse.

use proptest::prelude::*;
use rescomp::calculus::{native_param, resolvent, NativeParam, OperatorExpr, ReparamOptions};
use rescomp::linalg::{DenseMatrix, LinearMap, Vector};
use rescomp::operators::{atom_resolvent, Atom, ResolventQuery};
use rescomp::rng::Rng;

fn opts() -> ReparamOptions {
    ReparamOptions::default()
}

fn query(gamma: f64, x: &[f64]) -> ResolventQuery {
    ResolventQuery::new(gamma, Vector::from_slice(x).unwrap()).unwrap()
}

/// Scalar composition node whose resolvent has the closed form
/// J_t(x) = 2x / (2 + t) at every parameter t.
fn regularized_identity_node() -> OperatorExpr {
    let map = LinearMap::new(DenseMatrix::new(1, 1, vec![0.5]).unwrap()).unwrap();
    let inner = OperatorExpr::scale_left(
        2.0,
        OperatorExpr::scale_right(
            2.0,
            OperatorExpr::leaf(Atom::scaled_identity(1, 1.0).unwrap()),
        )
        .unwrap(),
    )
    .unwrap();
    OperatorExpr::cocompose(map, 1.0 / 3.0, inner).unwrap()
}

#[test]
fn ladder_reaches_closed_form_away_from_native_parameter() {
    let node = regularized_identity_node();
    assert_eq!(native_param(&node), NativeParam::Exact(1.0 / 3.0));
    for t in [0.1, 1.0, 2.0] {
        for x in [1.0, -0.4] {
            let j = resolvent(&node, &query(t, &[x]), &opts()).unwrap();
            let expected = 2.0 * x / (2.0 + t);
            assert!(
                (j.as_slice()[0] - expected).abs() <= 1e-9,
                "t={t} x={x}: {} vs {expected}",
                j.as_slice()[0]
            );
        }
    }
}

#[test]
fn double_inversion_preserves_the_resolvent() {
    let atom = Atom::subdiff_l1(3, 0.9).unwrap();
    let direct = OperatorExpr::leaf(atom.clone());
    let twice = OperatorExpr::inverse(OperatorExpr::inverse(OperatorExpr::leaf(atom)));
    let mut rng = Rng::new(17);
    for _ in 0..50 {
        let x = Vector::new(rng.in_ball(3, 3.0)).unwrap();
        for gamma in [0.5, 1.0, 2.5] {
            let q = ResolventQuery::new(gamma, x.clone()).unwrap();
            let a = resolvent(&direct, &q, &opts()).unwrap();
            let b = resolvent(&twice, &q, &opts()).unwrap();
            assert!(a.sub(&b).norm() <= 1e-12);
        }
    }
}

#[test]
fn output_shift_moves_the_query_point() {
    let atom = Atom::subdiff_l1(2, 0.6).unwrap();
    let z = Vector::from_slice(&[0.4, -0.9]).unwrap();
    let shifted =
        OperatorExpr::translate_out(z.clone(), OperatorExpr::leaf(atom.clone())).unwrap();
    let gamma = 0.8;
    let mut rng = Rng::new(18);
    for _ in 0..40 {
        let x = Vector::new(rng.in_ball(2, 2.0)).unwrap();
        let j = resolvent(&shifted, &ResolventQuery::new(gamma, x.clone()).unwrap(), &opts())
            .unwrap();
        let moved = x.add(&z.scale(gamma));
        let expected = atom_resolvent(&atom, &ResolventQuery::new(gamma, moved).unwrap()).unwrap();
        assert!(j.sub(&expected).norm() <= 1e-12);
    }
}

#[test]
fn input_shift_recenters_the_resolvent() {
    let atom = Atom::subdiff_l1(2, 0.6).unwrap();
    let w = Vector::from_slice(&[-0.3, 0.7]).unwrap();
    let shifted = OperatorExpr::translate_in(w.clone(), OperatorExpr::leaf(atom.clone())).unwrap();
    let gamma = 1.3;
    let mut rng = Rng::new(19);
    for _ in 0..40 {
        let x = Vector::new(rng.in_ball(2, 2.0)).unwrap();
        let j = resolvent(&shifted, &ResolventQuery::new(gamma, x.clone()).unwrap(), &opts())
            .unwrap();
        let inner = atom_resolvent(&atom, &ResolventQuery::new(gamma, x.sub(&w)).unwrap()).unwrap();
        let expected = inner.add(&w);
        assert!(j.sub(&expected).norm() <= 1e-12);
    }
}

#[test]
fn regularization_of_scaled_identity_matches_closed_form() {
    for (lambda, gamma, alpha) in [(0.5, 1.0, 2.0), (1.5, 0.7, 0.8), (3.0, 2.0, 1.0)] {
        let node = OperatorExpr::yosida(
            lambda,
            OperatorExpr::leaf(Atom::scaled_identity(2, alpha).unwrap()),
        )
        .unwrap();
        let x = Vector::from_slice(&[1.1, -0.6]).unwrap();
        let j = resolvent(&node, &ResolventQuery::new(gamma, x.clone()).unwrap(), &opts())
            .unwrap();
        let factor = (1.0 + lambda * alpha) / (1.0 + lambda * alpha + gamma * alpha);
        let expected = x.scale(factor);
        assert!(
            j.sub(&expected).norm() <= 1e-12,
            "lambda={lambda} gamma={gamma} alpha={alpha}"
        );
    }
}

#[test]
fn coisometric_composition_collapses_to_the_adjoint_sandwich() {
    let s = 1.0 / 2.0f64.sqrt();
    let map = LinearMap::new(DenseMatrix::new(1, 2, vec![s, s]).unwrap()).unwrap();
    assert!(map.is_coisometry());
    let atom = Atom::subdiff_l1(1, 0.7).unwrap();
    let compose =
        OperatorExpr::compose(map.clone(), 1.0, OperatorExpr::leaf(atom.clone())).unwrap();
    let cocompose =
        OperatorExpr::cocompose(map.clone(), 1.0, OperatorExpr::leaf(atom.clone())).unwrap();
    assert_eq!(native_param(&compose), NativeParam::AnyGamma);
    assert_eq!(native_param(&cocompose), NativeParam::AnyGamma);
    let mut rng = Rng::new(23);
    for _ in 0..40 {
        let x = Vector::new(rng.in_ball(2, 2.0)).unwrap();
        for gamma in [0.3, 1.0, 4.0] {
            let lx = map.apply(&x).unwrap();
            let jb = atom_resolvent(&atom, &ResolventQuery::new(gamma, lx.clone()).unwrap())
                .unwrap();
            let q = ResolventQuery::new(gamma, x.clone()).unwrap();

            let direct = resolvent(&compose, &q, &opts()).unwrap();
            let sandwich = map.apply_adjoint(&jb).unwrap();
            assert!(direct.sub(&sandwich).norm() <= 1e-12);

            let codirect = resolvent(&cocompose, &q, &opts()).unwrap();
            let cosandwich = x.sub(&map.apply_adjoint(&lx.sub(&jb)).unwrap());
            assert!(codirect.sub(&cosandwich).norm() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_complement_recovers_the_query_point(
        xs in prop::collection::vec(-3.0f64..3.0, 3),
        gamma in 0.2f64..4.0,
    ) {
        let atom = Atom::subdiff_l1(3, 0.9).unwrap();
        let direct = OperatorExpr::leaf(atom.clone());
        let inverted = OperatorExpr::inverse(OperatorExpr::leaf(atom));
        let x = Vector::from_slice(&xs).unwrap();
        let j = resolvent(&direct, &ResolventQuery::new(gamma, x.clone()).unwrap(), &opts())
            .unwrap();
        let jinv = resolvent(
            &inverted,
            &ResolventQuery::new(1.0 / gamma, x.scale(1.0 / gamma)).unwrap(),
            &opts(),
        )
        .unwrap();
        let recon = j.add(&jinv.scale(gamma));
        prop_assert!(recon.sub(&x).norm() <= 1e-9);
    }

    #[test]
    fn left_scaling_rule_holds_for_random_scales(
        rho in 0.2f64..3.0,
        xs in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let atom = Atom::subdiff_l1(2, 0.8).unwrap();
        let scaled = OperatorExpr::scale_left(rho, OperatorExpr::leaf(atom.clone())).unwrap();
        let gamma = 0.9;
        let x = Vector::from_slice(&xs).unwrap();
        let j = resolvent(&scaled, &ResolventQuery::new(gamma, x.clone()).unwrap(), &opts())
            .unwrap();
        let expected = atom_resolvent(
            &atom,
            &ResolventQuery::new(gamma * rho, x).unwrap(),
        )
        .unwrap();
        prop_assert!(j.sub(&expected).norm() <= 1e-12);
    }
}
