//! Master equivalence property: for every composition node kind, the
//! direct resolvent and the graph-membership search agree pointwise.

use rescomp::analysis::{inclusion_oracle, OracleGrid};
use rescomp::calculus::{
    resolvent, AverageTerm, MixtureTerm, OperatorExpr, ReparamOptions, WeightedMode,
};
use rescomp::linalg::{DenseMatrix, LinearMap, Vector};
use rescomp::operators::{Atom, ConvexSet, ResolventQuery};
use rescomp::rng::Rng;

fn map_2x2() -> LinearMap {
    LinearMap::new(
        DenseMatrix::from_rows(&[vec![0.6, 0.2], vec![0.1, 0.7]]).unwrap(),
    )
    .unwrap()
}

fn box_atom(dim: usize) -> Atom {
    Atom::normal_cone(
        ConvexSet::boxed(Vector::zeros(dim), Vector::new(vec![1.0; dim]).unwrap()).unwrap(),
    )
}

fn check(name: &str, expr: &OperatorExpr, gamma: f64, seed: u64) {
    let opts = ReparamOptions::default();
    let grid = OracleGrid::default();
    let dim = expr.dim();
    let mut rng = Rng::new(seed);
    for probe in 0..6 {
        let y = Vector::new(rng.in_ball(dim, 1.5)).unwrap();
        let direct = resolvent(expr, &ResolventQuery::new(gamma, y.clone()).unwrap(), &opts)
            .expect("direct resolvent");
        let searched = inclusion_oracle(expr, gamma, &y, &grid).expect("membership search");
        let gap = direct.sub(&searched).norm();
        assert!(
            gap <= 1e-5,
            "{name} probe {probe}: direct and searched resolvents differ by {gap}"
        );
    }
}

#[test]
fn leaf_and_wrapper_nodes_agree_with_the_search() {
    let l1 = Atom::subdiff_l1(2, 0.7).unwrap();
    check("leaf", &OperatorExpr::leaf(l1.clone()), 0.8, 101);
    check(
        "inverse",
        &OperatorExpr::inverse(OperatorExpr::leaf(l1.clone())),
        1.0,
        102,
    );
    check(
        "scale_left",
        &OperatorExpr::scale_left(1.6, OperatorExpr::leaf(l1.clone())).unwrap(),
        0.9,
        103,
    );
    check(
        "scale_right",
        &OperatorExpr::scale_right(0.7, OperatorExpr::leaf(l1.clone())).unwrap(),
        1.1,
        104,
    );
    check(
        "translate_out",
        &OperatorExpr::translate_out(
            Vector::from_slice(&[0.3, -0.2]).unwrap(),
            OperatorExpr::leaf(l1.clone()),
        )
        .unwrap(),
        0.8,
        105,
    );
    check(
        "translate_in",
        &OperatorExpr::translate_in(
            Vector::from_slice(&[-0.4, 0.1]).unwrap(),
            OperatorExpr::leaf(l1.clone()),
        )
        .unwrap(),
        1.2,
        106,
    );
    check(
        "add_scaled_id",
        &OperatorExpr::add_scaled_id(0.5, OperatorExpr::leaf(l1.clone())).unwrap(),
        0.9,
        107,
    );
    check(
        "yosida",
        &OperatorExpr::yosida(0.8, OperatorExpr::leaf(l1)).unwrap(),
        1.0,
        108,
    );
}

#[test]
fn composition_nodes_agree_with_the_search() {
    let l1 = Atom::subdiff_l1(2, 0.7).unwrap();
    check(
        "compose",
        &OperatorExpr::compose(map_2x2(), 0.9, OperatorExpr::leaf(l1.clone())).unwrap(),
        0.9,
        201,
    );
    check(
        "cocompose",
        &OperatorExpr::cocompose(map_2x2(), 0.9, OperatorExpr::leaf(box_atom(2))).unwrap(),
        0.9,
        202,
    );
    let row = LinearMap::new(DenseMatrix::new(1, 2, vec![0.5, -0.3]).unwrap()).unwrap();
    let terms = vec![
        MixtureTerm {
            weight: 0.6,
            map: map_2x2(),
            inner: OperatorExpr::leaf(l1.clone()),
        },
        MixtureTerm {
            weight: 0.4,
            map: row,
            inner: OperatorExpr::leaf(Atom::scaled_identity(1, 1.5).unwrap()),
        },
    ];
    check(
        "mixture",
        &OperatorExpr::mixture(0.8, terms.clone()).unwrap(),
        0.8,
        203,
    );
    check(
        "comixture",
        &OperatorExpr::comixture(0.8, terms).unwrap(),
        0.8,
        204,
    );
    let avg = vec![
        AverageTerm {
            weight: 0.3,
            inner: OperatorExpr::leaf(box_atom(2)),
        },
        AverageTerm {
            weight: 0.7,
            inner: OperatorExpr::leaf(l1),
        },
    ];
    check(
        "average",
        &OperatorExpr::average(1.1, avg).unwrap(),
        1.1,
        205,
    );
}

#[test]
fn splitting_chain_and_lift_nodes_agree_with_the_search() {
    let box1 = box_atom(1);
    let l1 = Atom::subdiff_l1(1, 0.7).unwrap();
    check(
        "douglas_rachford",
        &OperatorExpr::douglas_rachford(
            OperatorExpr::leaf(box1.clone()),
            OperatorExpr::leaf(l1.clone()),
        )
        .unwrap(),
        1.0,
        301,
    );
    check(
        "chain",
        &OperatorExpr::chain(
            0.8,
            vec![OperatorExpr::leaf(box1.clone()), OperatorExpr::leaf(l1.clone())],
        )
        .unwrap(),
        0.8,
        302,
    );
    let weight = LinearMap::new(
        DenseMatrix::from_rows(&[vec![1.2, 0.3], vec![0.0, 0.9]]).unwrap(),
    )
    .unwrap();
    check(
        "weighted_compose_plain",
        &OperatorExpr::weighted_compose(
            weight.clone(),
            0.9,
            OperatorExpr::leaf(Atom::subdiff_l1(2, 0.7).unwrap()),
            WeightedMode::Plain,
        )
        .unwrap(),
        0.9,
        303,
    );
    check(
        "weighted_compose_co",
        &OperatorExpr::weighted_compose(
            weight,
            0.9,
            OperatorExpr::leaf(box_atom(2)),
            WeightedMode::Co,
        )
        .unwrap(),
        0.9,
        304,
    );
    let contraction = LinearMap::new(DenseMatrix::new(1, 1, vec![0.6]).unwrap()).unwrap();
    check(
        "psi_lift",
        &OperatorExpr::psi_lift(contraction, 0.75, OperatorExpr::leaf(l1)).unwrap(),
        0.75,
        305,
    );
    check(
        "direct_sum",
        &OperatorExpr::direct_sum(vec![
            OperatorExpr::leaf(box1),
            OperatorExpr::leaf(Atom::scaled_identity(1, 2.0).unwrap()),
        ])
        .unwrap(),
        1.1,
        306,
    );
}
