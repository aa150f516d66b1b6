//! Atomic set-valued operators and the convex sets behind their normal cones.
//!
//! Atoms are the leaves of operator expressions: the zero operator, scaled
//! identities, monotone linear maps, normal cones of simple convex sets, the
//! subdifferential of a scaled l1 norm, and constant shifts of a base atom.
//! Each atom knows its resolvent in closed form for every positive parameter,
//! and a definition-level membership residual for its graph which the
//! estimation oracle uses without touching the resolvent formulas.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{jacobi_eigh, solve, DenseMatrix, LinalgError, Vector, DIM_CAP, RANK_TOL};

/// Errors raised while building or evaluating atoms and sets.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorError {
    /// A dense kernel failed underneath.
    Linalg(LinalgError),
    /// A set description was inconsistent.
    InvalidSet { reason: String },
    /// An atom parameterization is not monotone and was not marked unchecked.
    NotMonotone { detail: String },
    /// A scalar parameter was out of range.
    InvalidParameter { context: &'static str, value: f64 },
    /// The resolvent does not exist at the requested parameter.
    ResolventUndefined { detail: String },
    /// An argument had the wrong dimension.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

impl std::fmt::Display for OperatorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorError::Linalg(e) => write!(f, "linear algebra failure: {e}"),
            OperatorError::InvalidSet { reason } => write!(f, "invalid set: {reason}"),
            OperatorError::NotMonotone { detail } => {
                write!(f, "operator is not monotone: {detail}")
            }
            OperatorError::InvalidParameter { context, value } => {
                write!(f, "invalid parameter for {context}: {value}")
            }
            OperatorError::ResolventUndefined { detail } => {
                write!(f, "resolvent undefined: {detail}")
            }
            OperatorError::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
        }
    }
}

impl std::error::Error for OperatorError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            OperatorError::Linalg(e) => Some(e),
            _ => None,
        }
    }
}

impl From<LinalgError> for OperatorError {
    fn from(e: LinalgError) -> Self {
        OperatorError::Linalg(e)
    }
}

/// Closed convex set with a closed-form projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// Axis-aligned box with componentwise bounds.
    Box { lo: Vector, hi: Vector },
    /// Closed Euclidean ball of positive radius.
    Ball { center: Vector, radius: f64 },
    /// Affine subspace through `offset`, stored with an orthonormal basis of
    /// its direction space (no basis means a single point).
    AffineSubspace {
        offset: Vector,
        basis: Option<DenseMatrix>,
    },
    /// Single point.
    Singleton { point: Vector },
    /// Halfspace `<normal, x> <= offset`.
    Halfspace { normal: Vector, offset: f64 },
}

impl ConvexSet {
    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self, OperatorError> {
        if lo.dim() != hi.dim() {
            return Err(OperatorError::DimensionMismatch {
                context: "box bounds",
                expected: lo.dim(),
                got: hi.dim(),
            });
        }
        for i in 0..lo.dim() {
            if lo[i] > hi[i] {
                return Err(OperatorError::InvalidSet {
                    reason: format!(
                        "box lower bound {} exceeds upper bound {} in component {i}",
                        lo[i], hi[i]
                    ),
                });
            }
        }
        Ok(ConvexSet::Box { lo, hi })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self, OperatorError> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(OperatorError::InvalidParameter {
                context: "ball radius",
                value: radius,
            });
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    /// Affine subspace `offset + span(columns of spanning)`; the spanning
    /// columns are orthonormalized and near-dependent ones dropped.
    pub fn affine_subspace(
        offset: Vector,
        spanning: Option<DenseMatrix>,
    ) -> Result<Self, OperatorError> {
        let basis = match spanning {
            None => None,
            Some(m) => {
                if m.rows() != offset.dim() {
                    return Err(OperatorError::DimensionMismatch {
                        context: "affine basis rows",
                        expected: offset.dim(),
                        got: m.rows(),
                    });
                }
                orthonormalize_columns(&m)
            }
        };
        Ok(ConvexSet::AffineSubspace { offset, basis })
    }

    pub fn singleton(point: Vector) -> Self {
        ConvexSet::Singleton { point }
    }

    pub fn halfspace(normal: Vector, offset: f64) -> Result<Self, OperatorError> {
        if !offset.is_finite() {
            return Err(OperatorError::InvalidParameter {
                context: "halfspace offset",
                value: offset,
            });
        }
        if normal.norm() <= 0.0 {
            return Err(OperatorError::InvalidSet {
                reason: "halfspace normal must be nonzero".to_string(),
            });
        }
        Ok(ConvexSet::Halfspace { normal, offset })
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lo, .. } => lo.dim(),
            ConvexSet::Ball { center, .. } => center.dim(),
            ConvexSet::AffineSubspace { offset, .. } => offset.dim(),
            ConvexSet::Singleton { point } => point.dim(),
            ConvexSet::Halfspace { normal, .. } => normal.dim(),
        }
    }
}

fn orthonormalize_columns(m: &DenseMatrix) -> Option<DenseMatrix> {
    let gram = m.transpose().matmul(m).expect("transpose product");
    if gram
        .sub(&DenseMatrix::identity(m.cols()))
        .map(|d| d.max_abs())
        .unwrap_or(f64::INFINITY)
        <= 1e-12
    {
        return Some(m.clone());
    }
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for c in 0..m.cols() {
        let mut v: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
        let orig = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for b in &accepted {
                let proj: f64 = v.iter().zip(b).map(|(a, q)| a * q).sum();
                for (vi, qi) in v.iter_mut().zip(b) {
                    *vi -= proj * qi;
                }
            }
        }
        let rem = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rem > RANK_TOL * orig.max(1.0) {
            accepted.push(v.into_iter().map(|x| x / rem).collect());
        }
    }
    if accepted.is_empty() {
        return None;
    }
    let mut basis = DenseMatrix::zeros(m.rows(), accepted.len());
    for (c, col) in accepted.iter().enumerate() {
        for (r, val) in col.iter().enumerate() {
            basis.set(r, c, *val);
        }
    }
    Some(basis)
}

/// Euclidean projection onto the set.
pub fn project(set: &ConvexSet, x: &Vector) -> Result<Vector, OperatorError> {
    if x.dim() != set.dim() {
        return Err(OperatorError::DimensionMismatch {
            context: "projection argument",
            expected: set.dim(),
            got: x.dim(),
        });
    }
    match set {
        ConvexSet::Box { lo, hi } => {
            let clamped: Vec<f64> = (0..x.dim()).map(|i| x[i].max(lo[i]).min(hi[i])).collect();
            Ok(Vector::new(clamped)?)
        }
        ConvexSet::Ball { center, radius } => {
            let d = x.sub(center);
            let n = d.norm();
            if n <= *radius {
                Ok(x.clone())
            } else {
                Ok(center.axpy(*radius / n, &d))
            }
        }
        ConvexSet::AffineSubspace { offset, basis } => match basis {
            None => Ok(offset.clone()),
            Some(q) => {
                let d = x.sub(offset);
                let coeff = q.matvec_t(&d)?;
                let lifted = q.matvec(&coeff)?;
                Ok(offset.add(&lifted))
            }
        },
        ConvexSet::Singleton { point } => Ok(point.clone()),
        ConvexSet::Halfspace { normal, offset } => {
            let slack = normal.dot(x) - offset;
            if slack <= 0.0 {
                Ok(x.clone())
            } else {
                let nn = normal.dot(normal);
                Ok(x.axpy(-slack / nn, normal))
            }
        }
    }
}

/// Distance from `x` to the set.
pub fn set_distance(set: &ConvexSet, x: &Vector) -> Result<f64, OperatorError> {
    Ok(x.sub(&project(set, x)?).norm())
}

/// Atomic operator with a closed-form resolvent.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    /// The zero operator.
    Zero { dim: usize },
    /// `x -> alpha * x` with nonnegative `alpha`.
    ScaledIdentity { dim: usize, alpha: f64 },
    /// A linear operator whose symmetric part is positive semidefinite;
    /// `unchecked` admits parameterizations that fail that gate.
    LinearMonotone {
        matrix: DenseMatrix,
        unchecked: bool,
    },
    /// Normal cone of a convex set.
    NormalCone { set: ConvexSet },
    /// Subdifferential of `lambda * l1 norm` with positive `lambda`.
    SubdiffL1 { dim: usize, lambda: f64 },
    /// `base + v` for a constant vector `v`.
    ConstantShift { v: Vector, base: Box<Atom> },
}

fn check_atom_dim(dim: usize) -> Result<(), OperatorError> {
    if dim == 0 {
        return Err(OperatorError::Linalg(LinalgError::EmptyDimension {
            context: "atom",
        }));
    }
    if dim > DIM_CAP {
        return Err(OperatorError::Linalg(LinalgError::DimensionCap { dim }));
    }
    Ok(())
}

impl Atom {
    pub fn zero(dim: usize) -> Result<Self, OperatorError> {
        check_atom_dim(dim)?;
        Ok(Atom::Zero { dim })
    }

    /// Scaled identity; requires `alpha >= 0`.
    pub fn scaled_identity(dim: usize, alpha: f64) -> Result<Self, OperatorError> {
        check_atom_dim(dim)?;
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(OperatorError::InvalidParameter {
                context: "scaled identity factor",
                value: alpha,
            });
        }
        Ok(Atom::ScaledIdentity { dim, alpha })
    }

    /// Linear operator; requires the symmetric part to be positive
    /// semidefinite within tolerance 1e-10 relative to the matrix scale.
    pub fn linear_monotone(matrix: DenseMatrix) -> Result<Self, OperatorError> {
        if !matrix.is_square() {
            return Err(OperatorError::DimensionMismatch {
                context: "linear atom matrix",
                expected: matrix.rows(),
                got: matrix.cols(),
            });
        }
        let min_eig = symmetric_part_min_eig(&matrix)?;
        if min_eig < -1e-10 * matrix.max_abs().max(1.0) {
            return Err(OperatorError::NotMonotone {
                detail: format!("linear atom has symmetric part with eigenvalue {min_eig:e}"),
            });
        }
        Ok(Atom::LinearMonotone {
            matrix,
            unchecked: false,
        })
    }

    /// Linear operator without the monotonicity gate.
    pub fn linear_unchecked(matrix: DenseMatrix) -> Result<Self, OperatorError> {
        if !matrix.is_square() {
            return Err(OperatorError::DimensionMismatch {
                context: "linear atom matrix",
                expected: matrix.rows(),
                got: matrix.cols(),
            });
        }
        Ok(Atom::LinearMonotone {
            matrix,
            unchecked: true,
        })
    }

    pub fn normal_cone(set: ConvexSet) -> Self {
        Atom::NormalCone { set }
    }

    /// Subdifferential of the scaled l1 norm; requires `lambda > 0`.
    pub fn subdiff_l1(dim: usize, lambda: f64) -> Result<Self, OperatorError> {
        check_atom_dim(dim)?;
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(OperatorError::InvalidParameter {
                context: "l1 weight",
                value: lambda,
            });
        }
        Ok(Atom::SubdiffL1 { dim, lambda })
    }

    /// `base + v`.
    pub fn constant_shift(v: Vector, base: Atom) -> Result<Self, OperatorError> {
        if v.dim() != base.dim() {
            return Err(OperatorError::DimensionMismatch {
                context: "constant shift vector",
                expected: base.dim(),
                got: v.dim(),
            });
        }
        Ok(Atom::ConstantShift {
            v,
            base: Box::new(base),
        })
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            Atom::Zero { dim } => *dim,
            Atom::ScaledIdentity { dim, .. } => *dim,
            Atom::LinearMonotone { matrix, .. } => matrix.rows(),
            Atom::NormalCone { set } => set.dim(),
            Atom::SubdiffL1 { dim, .. } => *dim,
            Atom::ConstantShift { base, .. } => base.dim(),
        }
    }

    /// Whether the parameterization is monotone.
    pub fn is_monotone(&self) -> bool {
        match self {
            Atom::Zero { .. } => true,
            Atom::ScaledIdentity { .. } => true,
            Atom::LinearMonotone { matrix, .. } => match symmetric_part_min_eig(matrix) {
                Ok(min_eig) => min_eig >= -1e-10 * matrix.max_abs().max(1.0),
                Err(_) => false,
            },
            Atom::NormalCone { .. } => true,
            Atom::SubdiffL1 { .. } => true,
            Atom::ConstantShift { base, .. } => base.is_monotone(),
        }
    }
}

fn symmetric_part_min_eig(matrix: &DenseMatrix) -> Result<f64, OperatorError> {
    let sym = matrix.add(&matrix.transpose())?.scale(0.5);
    let (eig, _) = jacobi_eigh(&sym, 100)?;
    Ok(eig.iter().fold(f64::INFINITY, |a, b| a.min(*b)))
}

/// Resolvent parameter and evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventQuery {
    gamma: f64,
    point: Vector,
}

impl ResolventQuery {
    /// Validates that `gamma` is finite and positive.
    pub fn new(gamma: f64, point: Vector) -> Result<Self, OperatorError> {
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(OperatorError::InvalidParameter {
                context: "resolvent parameter",
                value: gamma,
            });
        }
        Ok(ResolventQuery { gamma, point })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn point(&self) -> &Vector {
        &self.point
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Resolvent of `gamma * A` at the query point: the solution `p` of
/// `point in p + gamma * A(p)`.
pub fn atom_resolvent(atom: &Atom, q: &ResolventQuery) -> Result<Vector, OperatorError> {
    let (gamma, y) = (q.gamma(), q.point());
    if y.dim() != atom.dim() {
        return Err(OperatorError::DimensionMismatch {
            context: "resolvent argument",
            expected: atom.dim(),
            got: y.dim(),
        });
    }
    match atom {
        Atom::Zero { .. } => Ok(y.clone()),
        Atom::ScaledIdentity { alpha, .. } => Ok(y.scale(1.0 / (1.0 + gamma * alpha))),
        Atom::LinearMonotone { matrix, .. } => {
            let n = matrix.rows();
            let system = DenseMatrix::identity(n).add(&matrix.scale(gamma))?;
            match solve(&system, y) {
                Ok(p) => Ok(p),
                Err(LinalgError::Singular { pivot, tol }) => {
                    Err(OperatorError::ResolventUndefined {
                        detail: format!(
                            "identity plus scaled linear part is singular (pivot {pivot:e}, tolerance {tol:e})"
                        ),
                    })
                }
                Err(e) => Err(e.into()),
            }
        }
        Atom::NormalCone { set } => project(set, y),
        Atom::SubdiffL1 { lambda, .. } => {
            let t = gamma * lambda;
            let out: Vec<f64> = y.as_slice().iter().map(|v| soft_threshold(*v, t)).collect();
            Ok(Vector::new(out)?)
        }
        Atom::ConstantShift { v, base } => {
            let shifted = y.axpy(-gamma, v);
            atom_resolvent(base, &ResolventQuery::new(gamma, shifted)?)
        }
    }
}

fn staircase_distance(a: f64, b: f64, lambda: f64) -> f64 {
    let d_left = (a.max(0.0)).hypot(b + lambda);
    let d_mid = a.hypot((b.abs() - lambda).max(0.0));
    let d_right = ((-a).max(0.0)).hypot(b - lambda);
    d_left.min(d_mid).min(d_right)
}

/// Definition-level residual of the graph membership `xstar in A(x)`.
///
/// Continuous in `(x, xstar)` and zero exactly on the graph (up to `tol`,
/// below which the score is clamped to zero; pass `tol = 0` for the raw
/// score). Built from the defining description of each atom: linear
/// identities, subdifferential intervals, and projections, never from the
/// resolvent formulas above.
pub fn inclusion_residual(
    atom: &Atom,
    x: &Vector,
    xstar: &Vector,
    tol: f64,
) -> Result<f64, OperatorError> {
    if x.dim() != atom.dim() {
        return Err(OperatorError::DimensionMismatch {
            context: "inclusion point",
            expected: atom.dim(),
            got: x.dim(),
        });
    }
    if xstar.dim() != atom.dim() {
        return Err(OperatorError::DimensionMismatch {
            context: "inclusion value",
            expected: atom.dim(),
            got: xstar.dim(),
        });
    }
    let raw = match atom {
        Atom::Zero { .. } => xstar.norm(),
        Atom::ScaledIdentity { alpha, .. } => xstar.sub(&x.scale(*alpha)).norm(),
        Atom::LinearMonotone { matrix, .. } => xstar.sub(&matrix.matvec(x)?).norm(),
        Atom::NormalCone { set } => {
            let shifted = x.add(xstar);
            let proj = project(set, &shifted)?;
            x.sub(&proj).norm()
        }
        Atom::SubdiffL1 { lambda, .. } => {
            let mut acc = 0.0;
            for i in 0..x.dim() {
                let d = staircase_distance(x[i], xstar[i], *lambda);
                acc += d * d;
            }
            acc.sqrt()
        }
        Atom::ConstantShift { v, base } => {
            let unshifted = xstar.sub(v);
            inclusion_residual(base, x, &unshifted, 0.0)?
        }
    };
    if raw <= tol {
        Ok(0.0)
    } else {
        Ok(raw)
    }
}

impl std::fmt::Display for ConvexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvexSet::Box { lo, hi } => {
                write!(f, "box(lo={:?}, hi={:?})", lo.as_slice(), hi.as_slice())
            }
            ConvexSet::Ball { center, radius } => {
                write!(f, "ball(center={:?}, radius={radius})", center.as_slice())
            }
            ConvexSet::AffineSubspace { offset, basis } => {
                let rank = basis.as_ref().map_or(0, |b| b.cols());
                write!(f, "affine(offset={:?}, rank={rank})", offset.as_slice())
            }
            ConvexSet::Singleton { point } => {
                write!(f, "singleton(point={:?})", point.as_slice())
            }
            ConvexSet::Halfspace { normal, offset } => write!(
                f,
                "halfspace(normal={:?}, offset={offset})",
                normal.as_slice()
            ),
        }
    }
}

impl std::fmt::Display for Atom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Atom::Zero { dim } => write!(f, "zero(dim={dim})"),
            Atom::ScaledIdentity { dim, alpha } => {
                write!(f, "scaled_identity(alpha={alpha}, dim={dim})")
            }
            Atom::LinearMonotone { matrix, unchecked } => {
                if *unchecked {
                    write!(f, "linear(dim={}, unchecked)", matrix.rows())
                } else {
                    write!(f, "linear(dim={})", matrix.rows())
                }
            }
            Atom::NormalCone { set } => write!(f, "normal_cone({set})"),
            Atom::SubdiffL1 { dim, lambda } => {
                write!(f, "subdiff_l1(lambda={lambda}, dim={dim})")
            }
            Atom::ConstantShift { v, base } => {
                write!(f, "shift(v={:?}, base={base})", v.as_slice())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SetRepr {
    Box {
        lo: Vector,
        hi: Vector,
    },
    Ball {
        center: Vector,
        radius: f64,
    },
    AffineSubspace {
        offset: Vector,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<DenseMatrix>,
    },
    Singleton {
        point: Vector,
    },
    Halfspace {
        normal: Vector,
        offset: f64,
    },
}

impl Serialize for ConvexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self.clone() {
            ConvexSet::Box { lo, hi } => SetRepr::Box { lo, hi },
            ConvexSet::Ball { center, radius } => SetRepr::Ball { center, radius },
            ConvexSet::AffineSubspace { offset, basis } => {
                SetRepr::AffineSubspace { offset, basis }
            }
            ConvexSet::Singleton { point } => SetRepr::Singleton { point },
            ConvexSet::Halfspace { normal, offset } => SetRepr::Halfspace { normal, offset },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConvexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = SetRepr::deserialize(deserializer)?;
        let set = match repr {
            SetRepr::Box { lo, hi } => ConvexSet::boxed(lo, hi),
            SetRepr::Ball { center, radius } => ConvexSet::ball(center, radius),
            SetRepr::AffineSubspace { offset, basis } => {
                ConvexSet::affine_subspace(offset, basis)
            }
            SetRepr::Singleton { point } => Ok(ConvexSet::singleton(point)),
            SetRepr::Halfspace { normal, offset } => ConvexSet::halfspace(normal, offset),
        };
        set.map_err(D::Error::custom)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum AtomRepr {
    Zero {
        dim: usize,
    },
    ScaledIdentity {
        dim: usize,
        alpha: f64,
    },
    LinearMonotone {
        matrix: DenseMatrix,
        #[serde(default, skip_serializing_if = "is_false")]
        unchecked: bool,
    },
    NormalCone {
        set: ConvexSet,
    },
    SubdiffL1 {
        dim: usize,
        lambda: f64,
    },
    ConstantShift {
        v: Vector,
        base: Box<AtomRepr>,
    },
}

fn atom_to_repr(atom: &Atom) -> AtomRepr {
    match atom {
        Atom::Zero { dim } => AtomRepr::Zero { dim: *dim },
        Atom::ScaledIdentity { dim, alpha } => AtomRepr::ScaledIdentity {
            dim: *dim,
            alpha: *alpha,
        },
        Atom::LinearMonotone { matrix, unchecked } => AtomRepr::LinearMonotone {
            matrix: matrix.clone(),
            unchecked: *unchecked,
        },
        Atom::NormalCone { set } => AtomRepr::NormalCone { set: set.clone() },
        Atom::SubdiffL1 { dim, lambda } => AtomRepr::SubdiffL1 {
            dim: *dim,
            lambda: *lambda,
        },
        Atom::ConstantShift { v, base } => AtomRepr::ConstantShift {
            v: v.clone(),
            base: Box::new(atom_to_repr(base)),
        },
    }
}

fn atom_from_repr(repr: AtomRepr) -> Result<Atom, OperatorError> {
    match repr {
        AtomRepr::Zero { dim } => Atom::zero(dim),
        AtomRepr::ScaledIdentity { dim, alpha } => Atom::scaled_identity(dim, alpha),
        AtomRepr::LinearMonotone { matrix, unchecked } => {
            if unchecked {
                Atom::linear_unchecked(matrix)
            } else {
                Atom::linear_monotone(matrix)
            }
        }
        AtomRepr::NormalCone { set } => Ok(Atom::normal_cone(set)),
        AtomRepr::SubdiffL1 { dim, lambda } => Atom::subdiff_l1(dim, lambda),
        AtomRepr::ConstantShift { v, base } => {
            let base = atom_from_repr(*base)?;
            Atom::constant_shift(v, base)
        }
    }
}

impl Serialize for Atom {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        atom_to_repr(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = AtomRepr::deserialize(deserializer)?;
        atom_from_repr(repr).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(entries: &[f64]) -> Vector {
        Vector::from_slice(entries).unwrap()
    }

    fn res(atom: &Atom, gamma: f64, y: &[f64]) -> Vector {
        atom_resolvent(atom, &ResolventQuery::new(gamma, v(y)).unwrap()).unwrap()
    }

    #[test]
    fn soft_threshold_example() {
        let atom = Atom::subdiff_l1(2, 1.0).unwrap();
        let p = res(&atom, 0.5, &[2.0, -0.3]);
        assert_eq!(p.as_slice(), &[1.5, 0.0]);
    }

    #[test]
    fn ball_projection_example() {
        let set = ConvexSet::ball(v(&[0.0, 0.0]), 1.0).unwrap();
        let p = project(&set, &v(&[3.0, 4.0])).unwrap();
        assert!((p[0] - 0.6).abs() <= 1e-12);
        assert!((p[1] - 0.8).abs() <= 1e-12);
    }

    #[test]
    fn halfspace_projection_example() {
        let set = ConvexSet::halfspace(v(&[1.0, 0.0]), 0.0).unwrap();
        let p = project(&set, &v(&[2.0, 5.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 5.0]);
        let inside = project(&set, &v(&[-1.0, 2.0])).unwrap();
        assert_eq!(inside.as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn box_clamp_resolvent_example() {
        let set = ConvexSet::boxed(v(&[0.0]), v(&[1.0])).unwrap();
        let atom = Atom::normal_cone(set);
        let p = res(&atom, 1.0, &[2.0]);
        assert_eq!(p.as_slice(), &[1.0]);
    }

    #[test]
    fn box_normal_cone_membership() {
        let set = ConvexSet::boxed(v(&[0.0]), v(&[1.0])).unwrap();
        let atom = Atom::normal_cone(set);
        let r = inclusion_residual(&atom, &v(&[1.0]), &v(&[3.0]), 0.0).unwrap();
        assert_eq!(r, 0.0);
        let r_inside = inclusion_residual(&atom, &v(&[0.5]), &v(&[3.0]), 0.0).unwrap();
        assert!((r_inside - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn zero_atom_resolvent_is_identity() {
        let atom = Atom::zero(2).unwrap();
        let p = res(&atom, 7.5, &[5.0, -2.0]);
        assert_eq!(p.as_slice(), &[5.0, -2.0]);
    }

    #[test]
    fn scaled_identity_resolvent() {
        let atom = Atom::scaled_identity(1, 3.0).unwrap();
        let p = res(&atom, 2.0, &[14.0]);
        assert!((p[0] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn scaled_identity_rejects_negative() {
        assert!(matches!(
            Atom::scaled_identity(1, -0.5),
            Err(OperatorError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn rotation_atom_is_monotone() {
        let rot = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let atom = Atom::linear_monotone(rot).unwrap();
        assert!(atom.is_monotone());
        let p = res(&atom, 1.0, &[1.0, 1.0]);
        assert!((p[0] - 1.0).abs() <= 1e-12);
        assert!(p[1].abs() <= 1e-12);
    }

    #[test]
    fn negative_definite_linear_requires_unchecked() {
        let m = DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!(matches!(
            Atom::linear_monotone(m.clone()),
            Err(OperatorError::NotMonotone { .. })
        ));
        let atom = Atom::linear_unchecked(m).unwrap();
        assert!(!atom.is_monotone());
        let p = res(&atom, 0.5, &[1.0, 0.0]);
        assert!((p[0] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_shift_resolvent() {
        let base = Atom::zero(2).unwrap();
        let atom = Atom::constant_shift(v(&[1.0, -2.0]), base).unwrap();
        let p = res(&atom, 2.0, &[3.0, 3.0]);
        assert_eq!(p.as_slice(), &[1.0, 7.0]);
        let r = inclusion_residual(&atom, &p, &v(&[1.0, -2.0]), 0.0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn scaled_identity_membership_example() {
        let atom = Atom::scaled_identity(1, 2.0).unwrap();
        let r = inclusion_residual(&atom, &v(&[1.0]), &v(&[2.0]), 0.0).unwrap();
        assert_eq!(r, 0.0);
        let atom0 = Atom::zero(1).unwrap();
        let r0 = inclusion_residual(&atom0, &v(&[1.0]), &v(&[0.7]), 0.0).unwrap();
        assert!((r0 - 0.7).abs() <= 1e-15);
    }

    #[test]
    fn l1_residual_matches_subdifferential() {
        let atom = Atom::subdiff_l1(1, 1.0).unwrap();
        assert_eq!(
            inclusion_residual(&atom, &v(&[2.0]), &v(&[1.0]), 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            inclusion_residual(&atom, &v(&[0.0]), &v(&[0.4]), 0.0).unwrap(),
            0.0
        );
        let off = inclusion_residual(&atom, &v(&[2.0]), &v(&[0.0]), 0.0).unwrap();
        assert!(off > 0.5);
    }

    #[test]
    fn affine_projection_orthonormalizes() {
        let offset = v(&[0.0, 0.0, 1.0]);
        let spanning =
            DenseMatrix::from_rows(&[vec![2.0, 4.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let set = ConvexSet::affine_subspace(offset, Some(spanning)).unwrap();
        match &set {
            ConvexSet::AffineSubspace { basis: Some(b), .. } => assert_eq!(b.cols(), 1),
            other => panic!("unexpected shape {other:?}"),
        }
        let p = project(&set, &v(&[3.0, 5.0, 9.0])).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 0.0, 1.0]);
    }

    #[test]
    fn projection_idempotent() {
        let sets = vec![
            ConvexSet::boxed(v(&[-1.0, 0.0]), v(&[1.0, 2.0])).unwrap(),
            ConvexSet::ball(v(&[1.0, 1.0]), 0.5).unwrap(),
            ConvexSet::halfspace(v(&[1.0, 1.0]), 1.0).unwrap(),
            ConvexSet::singleton(v(&[2.0, -3.0])),
        ];
        for set in sets {
            let x = v(&[3.0, -4.0]);
            let p1 = project(&set, &x).unwrap();
            let p2 = project(&set, &p1).unwrap();
            assert!(p2.sub(&p1).norm() <= 1e-12, "set {set}");
        }
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(matches!(
            ConvexSet::boxed(v(&[1.0]), v(&[0.0])),
            Err(OperatorError::InvalidSet { .. })
        ));
        assert!(matches!(
            ConvexSet::ball(v(&[0.0]), 0.0),
            Err(OperatorError::InvalidParameter { .. })
        ));
        assert!(matches!(
            ConvexSet::halfspace(v(&[0.0, 0.0]), 1.0),
            Err(OperatorError::InvalidSet { .. })
        ));
        assert!(matches!(
            Atom::subdiff_l1(2, 0.0),
            Err(OperatorError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn atom_json_round_trip() {
        let atoms = vec![
            Atom::zero(2).unwrap(),
            Atom::scaled_identity(3, 1.5).unwrap(),
            Atom::linear_monotone(
                DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap(),
            )
            .unwrap(),
            Atom::linear_unchecked(
                DenseMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap(),
            )
            .unwrap(),
            Atom::subdiff_l1(4, 0.75).unwrap(),
            Atom::normal_cone(ConvexSet::ball(v(&[1.0, 2.0]), 3.0).unwrap()),
            Atom::normal_cone(ConvexSet::singleton(v(&[0.0]))),
            Atom::normal_cone(
                ConvexSet::affine_subspace(
                    v(&[1.0, 0.0]),
                    Some(DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap()),
                )
                .unwrap(),
            ),
            Atom::constant_shift(v(&[0.5]), Atom::scaled_identity(1, 2.0).unwrap()).unwrap(),
        ];
        for atom in atoms {
            let text = serde_json::to_string(&atom).unwrap();
            let back: Atom = serde_json::from_str(&text).unwrap();
            assert_eq!(atom, back, "round trip failed for {text}");
        }
    }

    #[test]
    fn normal_cone_box_json_shape() {
        let atom = Atom::normal_cone(ConvexSet::boxed(v(&[0.0]), v(&[1.0])).unwrap());
        let text = serde_json::to_string(&atom).unwrap();
        assert_eq!(
            text,
            r#"{"type":"normal_cone","set":{"type":"box","lo":[0.0],"hi":[1.0]}}"#
        );
    }

    #[test]
    fn unchecked_flag_required_in_json() {
        let bad = r#"{"type":"linear_monotone","matrix":{"rows":1,"cols":1,"data":[-1.0]}}"#;
        assert!(serde_json::from_str::<Atom>(bad).is_err());
        let ok =
            r#"{"type":"linear_monotone","matrix":{"rows":1,"cols":1,"data":[-1.0]},"unchecked":true}"#;
        assert!(serde_json::from_str::<Atom>(ok).is_ok());
    }

    #[test]
    fn query_rejects_bad_gamma() {
        for gamma in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                ResolventQuery::new(gamma, v(&[1.0])),
                Err(OperatorError::InvalidParameter { .. })
            ));
        }
    }
}
