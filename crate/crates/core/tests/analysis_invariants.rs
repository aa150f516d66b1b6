//! Structural guarantees of the analysis estimators: firm
//! nonexpansiveness of sampled resolvents, strong monotonicity moduli
//! against the closed-form rate, graph-distance symmetry, and bit-stable
//! sweep output.

use rescomp::analysis::{
    d_gamma_delta, default_pair_epsilon, derive_seed, fitzpatrick_check, gamma_sweep,
    minty_sample, modulus_estimate, sweep_to_csv, SweepConfig, SweepKind,
};
use rescomp::calculus::{resolvent, OperatorExpr, ReparamOptions};
use rescomp::linalg::{DenseMatrix, InnerProduct, LinearMap, Vector};
use rescomp::operators::{Atom, ConvexSet, ResolventQuery};
use rescomp::rng::Rng;

fn map_2x2() -> LinearMap {
    LinearMap::new(
        DenseMatrix::from_rows(&[vec![0.6, 0.2], vec![0.1, 0.7]]).unwrap(),
    )
    .unwrap()
}

fn box_atom_2d() -> Atom {
    Atom::normal_cone(
        ConvexSet::boxed(Vector::zeros(2), Vector::from_slice(&[1.0, 1.0]).unwrap()).unwrap(),
    )
}

#[test]
fn sampled_resolvents_are_firmly_nonexpansive() {
    let opts = ReparamOptions::default();
    let gamma = 0.9;
    let nodes = [
        OperatorExpr::compose(
            map_2x2(),
            gamma,
            OperatorExpr::leaf(Atom::subdiff_l1(2, 0.8).unwrap()),
        )
        .unwrap(),
        OperatorExpr::cocompose(map_2x2(), gamma, OperatorExpr::leaf(box_atom_2d())).unwrap(),
    ];
    for (idx, node) in nodes.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(501, idx as u64));
        let mut points = Vec::with_capacity(142);
        for _ in 0..142 {
            let y = Vector::new(rng.in_ball(2, 3.0)).unwrap();
            let j = resolvent(node, &ResolventQuery::new(gamma, y.clone()).unwrap(), &opts)
                .unwrap();
            points.push((y, j));
        }
        let mut min_margin = f64::INFINITY;
        for i in 0..points.len() {
            for k in i + 1..points.len() {
                let dy = points[i].0.sub(&points[k].0);
                let dj = points[i].1.sub(&points[k].1);
                min_margin = min_margin.min(dj.dot(&dy) - dj.dot(&dj));
            }
        }
        assert!(
            min_margin >= -1e-10,
            "node {idx}: firm nonexpansiveness margin {min_margin}"
        );
    }
}

#[test]
fn modulus_estimates_match_the_strong_monotonicity_rate() {
    let mut cell = 0u64;
    for alpha in [0.5, 1.0, 2.0] {
        for gamma in [0.5, 1.0, 2.0] {
            for c in [0.6, 0.8, 1.0] {
                let map = LinearMap::new(
                    DenseMatrix::from_rows(&[vec![c, 0.0], vec![0.0, c]]).unwrap(),
                )
                .unwrap();
                let node = OperatorExpr::compose(
                    map,
                    gamma,
                    OperatorExpr::leaf(Atom::scaled_identity(2, alpha).unwrap()),
                )
                .unwrap();
                let sample =
                    minty_sample(&node, gamma, 2.0, 12, derive_seed(502, cell)).unwrap();
                let ip = InnerProduct::standard(2).unwrap();
                let report =
                    modulus_estimate(&sample, &ip, default_pair_epsilon(2.0)).unwrap();
                let formula = (alpha + 1.0 / gamma) / (c * c) - 1.0 / gamma;
                assert!(
                    (report.beta_hat - formula).abs() <= 1e-6,
                    "alpha={alpha} gamma={gamma} c={c}: {} vs {formula}",
                    report.beta_hat
                );
                cell += 1;
            }
        }
    }
}

#[test]
fn monotone_corollary_rate_holds_without_strong_monotonicity() {
    for c in [0.6, 0.8] {
        let map = LinearMap::new(
            DenseMatrix::from_rows(&[vec![c, 0.0], vec![0.0, c]]).unwrap(),
        )
        .unwrap();
        let node =
            OperatorExpr::compose(map, 1.0, OperatorExpr::leaf(Atom::zero(2).unwrap())).unwrap();
        let sample = minty_sample(&node, 1.0, 2.0, 12, derive_seed(503, c.to_bits())).unwrap();
        let ip = InnerProduct::standard(2).unwrap();
        let report = modulus_estimate(&sample, &ip, default_pair_epsilon(2.0)).unwrap();
        let formula = 1.0 / (c * c) - 1.0;
        assert!(
            (report.beta_hat - formula).abs() <= 1e-6,
            "c={c}: {} vs {formula}",
            report.beta_hat
        );
    }
}

#[test]
fn graph_distance_is_symmetric_in_the_pair_order() {
    let a = OperatorExpr::compose(
        map_2x2(),
        0.9,
        OperatorExpr::leaf(Atom::subdiff_l1(2, 0.8).unwrap()),
    )
    .unwrap();
    let b = OperatorExpr::leaf(box_atom_2d());
    let forward = d_gamma_delta(&a, &b, 1.0, 2.0, 32, 601).unwrap();
    let backward = d_gamma_delta(&b, &a, 1.0, 2.0, 32, 601).unwrap();
    assert_eq!(forward.to_bits(), backward.to_bits());
    assert!(forward > 0.0);
}

#[test]
fn fitzpatrick_sampled_bound_never_exceeds_the_exact_value() {
    let map = LinearMap::identity(2);
    let target = Atom::scaled_identity(2, 1.5).unwrap();
    let x = Vector::from_slice(&[0.6, -0.2]).unwrap();
    let xs = Vector::from_slice(&[0.3, 0.4]).unwrap();
    let report = fitzpatrick_check(&map, &target, 0.9, &x, &xs, 400, 701).unwrap();
    assert!(report.violation <= 1e-8);
    assert!(report.rhs_sampled <= report.rhs_exact + 1e-9);
    assert!(report.max_inner <= report.rhs_exact + 1e-8);
}

#[test]
fn sweep_output_is_bit_stable_across_runs_and_thread_counts() {
    let config = SweepConfig {
        label: "stability".to_string(),
        kind: SweepKind::Yosida,
        gammas: vec![1.0, 0.5, 0.25],
        probe_gamma: 1.0,
        delta: 2.0,
        rho: 1.0,
        samples: 16,
        seed: 801,
        map: None,
        atom: Some(Atom::subdiff_l1(1, 0.7).unwrap()),
        limit: None,
        range_bound: None,
    };
    let first = gamma_sweep(&config, 1).unwrap();
    let second = gamma_sweep(&config, 1).unwrap();
    let threaded = gamma_sweep(&config, 4).unwrap();
    assert_eq!(sweep_to_csv(&first), sweep_to_csv(&second));
    assert_eq!(sweep_to_csv(&first), sweep_to_csv(&threaded));
    let json_first = serde_json::to_string(&first).unwrap();
    let json_threaded = serde_json::to_string(&threaded).unwrap();
    assert_eq!(json_first, json_threaded);
}
