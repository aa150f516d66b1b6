//! Dense linear algebra sized for verification workloads (dimensions <= 64).
//!
//! Everything here is deterministic and allocation-friendly rather than fast:
//! power iteration for operator norms, Gaussian elimination with partial
//! pivoting for solves, cyclic Jacobi for symmetric eigendecompositions, and a
//! one-sided Jacobi SVD for pseudo-inverses and kernels. All routines reject
//! non-finite input and dimensions above [`DIM_CAP`].

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::splitmix64;

/// Hard upper bound on vector and matrix dimensions.
pub const DIM_CAP: usize = 64;

/// Tolerance for classifying a map as isometric or coisometric.
pub const CLASS_TOL: f64 = 1e-9;

/// Relative rank cutoff for pseudo-inverses and kernel bases.
pub const RANK_TOL: f64 = 1e-10;

/// Errors raised by the dense kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    /// An operand had a different dimension than the operation requires.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A dimension exceeded [`DIM_CAP`].
    DimensionCap { dim: usize },
    /// A zero dimension where a positive one is required.
    EmptyDimension { context: &'static str },
    /// An entry was NaN or infinite.
    NonFinite { context: &'static str },
    /// Elimination met a pivot below the singularity tolerance.
    Singular { pivot: f64, tol: f64 },
    /// An iterative routine failed to converge within its budget.
    IterationLimit { op: &'static str, iters: usize },
    /// A matrix required to be symmetric was not.
    NotSymmetric { max_asym: f64 },
    /// A matrix required to be positive semidefinite had a negative eigenvalue.
    NotPsd { min_eig: f64 },
    /// A Gram matrix required to be positive definite was not.
    NotSpd { min_eig: f64 },
}

impl std::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinalgError::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            LinalgError::DimensionCap { dim } => {
                write!(f, "dimension {dim} exceeds the cap of {DIM_CAP}")
            }
            LinalgError::EmptyDimension { context } => {
                write!(f, "{context}: dimension must be positive")
            }
            LinalgError::NonFinite { context } => {
                write!(f, "{context}: entries must be finite")
            }
            LinalgError::Singular { pivot, tol } => {
                write!(f, "matrix is singular: pivot {pivot:e} below tolerance {tol:e}")
            }
            LinalgError::IterationLimit { op, iters } => {
                write!(f, "{op} did not converge within {iters} iterations")
            }
            LinalgError::NotSymmetric { max_asym } => {
                write!(f, "matrix is not symmetric: max asymmetry {max_asym:e}")
            }
            LinalgError::NotPsd { min_eig } => {
                write!(f, "matrix is not positive semidefinite: min eigenvalue {min_eig:e}")
            }
            LinalgError::NotSpd { min_eig } => {
                write!(f, "matrix is not positive definite: min eigenvalue {min_eig:e}")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

fn check_dim(dim: usize) -> Result<(), LinalgError> {
    if dim > DIM_CAP {
        return Err(LinalgError::DimensionCap { dim });
    }
    Ok(())
}

/// Finite-dimensional real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Validates entries and dimension.
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        check_dim(entries.len())?;
        if entries.is_empty() {
            return Err(LinalgError::EmptyDimension { context: "vector" });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { context: "vector" });
        }
        Ok(Vector(entries))
    }

    /// Validating constructor from a slice.
    pub fn from_slice(entries: &[f64]) -> Result<Self, LinalgError> {
        Vector::new(entries.to_vec())
    }

    /// All-zero vector of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1 && dim <= DIM_CAP, "vector dimension out of range");
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot on mismatched dimensions");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "add on mismatched dimensions");
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "sub on mismatched dimensions");
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * s).collect())
    }

    /// self + s * other.
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "axpy on mismatched dimensions");
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    /// Concatenates two vectors (product-space stacking).
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        assert!(v.len() <= DIM_CAP, "concatenation exceeds dimension cap");
        Vector(v)
    }

    /// Splits at `at` into a leading and trailing part.
    pub fn split_at(&self, at: usize) -> (Vector, Vector) {
        assert!(at >= 1 && at < self.dim(), "split point out of range");
        (
            Vector(self.0[..at].to_vec()),
            Vector(self.0[at..].to_vec()),
        )
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        Vector::new(raw).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Validates shape, cap, and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        check_dim(rows)?;
        check_dim(cols)?;
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyDimension { context: "matrix" });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: "matrix data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { context: "matrix" });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds from nested rows, validating rectangularity.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        if rows.is_empty() {
            return Err(LinalgError::EmptyDimension { context: "matrix" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    context: "matrix row length",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        DenseMatrix::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && rows <= DIM_CAP && cols >= 1 && cols <= DIM_CAP);
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = DenseMatrix::zeros(dim, dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Matrix-vector product; checks the dimension.
    pub fn matvec(&self, x: &Vector) -> Result<Vector, LinalgError> {
        if x.dim() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self.get(r, c) * x[c];
            }
            out[r] = acc;
        }
        Ok(Vector(out))
    }

    /// Transposed matrix-vector product; checks the dimension.
    pub fn matvec_t(&self, x: &Vector) -> Result<Vector, LinalgError> {
        if x.dim() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matvec_t",
                expected: self.rows,
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for c in 0..self.cols {
                out[c] += self.get(r, c) * xr;
            }
        }
        Ok(Vector(out))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let v = self.get(r, k);
                if v == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * out.cols + c] += v * other.get(k, c);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "matrix add",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl Serialize for DenseMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DenseMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = MatrixRepr::deserialize(deserializer)?;
        DenseMatrix::new(raw.rows, raw.cols, raw.data).map_err(D::Error::custom)
    }
}

/// Estimates the spectral norm by power iteration on M^T M.
///
/// Starts from the normalized all-ones vector; on stagnation restarts once
/// from a fixed pseudo-random direction before giving up.
pub fn operator_norm(m: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let seeds: [Vec<f64>; 2] = {
        let ones = vec![1.0; m.cols()];
        let mut state = 0x9d1f_36cb_u64;
        let jitter: Vec<f64> = (0..m.cols())
            .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            .collect();
        [ones, jitter]
    };
    let mut best: Option<f64> = None;
    for seed in &seeds {
        let norm0 = seed.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = Vector(seed.iter().map(|x| x / norm0).collect());
        let mut prev = f64::NAN;
        for _ in 0..max_iter {
            let mv = m.matvec(&v)?;
            let w = m.matvec_t(&mv)?;
            let est_sq = v.dot(&w);
            let wn = w.norm();
            if wn <= f64::MIN_POSITIVE {
                return Ok(0.0);
            }
            v = w.scale(1.0 / wn);
            let est = est_sq.max(0.0).sqrt();
            if prev.is_finite() && (est - prev).abs() <= tol * est.max(1.0) {
                return Ok(est);
            }
            prev = est;
        }
        if prev.is_finite() {
            best = Some(best.map_or(prev, |b: f64| b.max(prev)));
        }
    }
    match best {
        Some(_) => Err(LinalgError::IterationLimit {
            op: "operator norm power iteration",
            iters: max_iter,
        }),
        None => Ok(0.0),
    }
}

/// Solves a square system by Gaussian elimination with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &Vector) -> Result<Vector, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            context: "solve requires a square matrix",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    if b.dim() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            context: "solve right-hand side",
            expected: a.rows(),
            got: b.dim(),
        });
    }
    let n = a.rows();
    let tol = 1e-12 * a.max_abs().max(1e-300);
    let mut m = a.clone();
    let mut rhs: Vec<f64> = b.as_slice().to_vec();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = m.get(col, col).abs();
        for r in col + 1..n {
            let v = m.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= tol {
            return Err(LinalgError::Singular {
                pivot: pivot_val,
                tol,
            });
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(pivot_row, c));
                m.set(pivot_row, c, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        let inv_p = 1.0 / m.get(col, col);
        for r in col + 1..n {
            let factor = m.get(r, col) * inv_p;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m.set(r, c, m.get(r, c) - factor * m.get(col, c));
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m.get(r, c) * x[c];
        }
        x[r] = acc / m.get(r, r);
    }
    Vector::new(x)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, q)` with the input equal to `q diag(eigenvalues) q^T`
/// up to the sweep tolerance; `q` has the eigenvectors for columns.
pub fn jacobi_eigh(s: &DenseMatrix, max_sweeps: usize) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::DimensionMismatch {
            context: "eigendecomposition requires a square matrix",
            expected: s.rows(),
            got: s.cols(),
        });
    }
    let n = s.rows();
    let scale = s.max_abs().max(1e-300);
    let mut max_asym = 0.0_f64;
    for r in 0..n {
        for c in r + 1..n {
            max_asym = max_asym.max((s.get(r, c) - s.get(c, r)).abs());
        }
    }
    if max_asym > 1e-9 * scale {
        return Err(LinalgError::NotSymmetric { max_asym });
    }
    let mut a = s.clone();
    for r in 0..n {
        for c in r + 1..n {
            let sym = 0.5 * (a.get(r, c) + a.get(c, r));
            a.set(r, c, sym);
            a.set(c, r, sym);
        }
    }
    let mut q = DenseMatrix::identity(n);
    let off_tol = 1e-14 * scale;
    for _ in 0..max_sweeps {
        let mut off = 0.0_f64;
        for r in 0..n {
            for c in r + 1..n {
                off = off.max(a.get(r, c).abs());
            }
        }
        if off <= off_tol {
            let eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
            return Ok((eig, q));
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = a.get(p, r);
                if apr.abs() <= off_tol * 1e-2 {
                    continue;
                }
                let app = a.get(p, p);
                let arr = a.get(r, r);
                let theta = 0.5 * (arr - app) / apr;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akr = a.get(k, r);
                    a.set(k, p, c * akp - sn * akr);
                    a.set(k, r, sn * akp + c * akr);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let ark = a.get(r, k);
                    a.set(p, k, c * apk - sn * ark);
                    a.set(r, k, sn * apk + c * ark);
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - sn * qkr);
                    q.set(k, r, sn * qkp + c * qkr);
                }
            }
        }
    }
    Err(LinalgError::IterationLimit {
        op: "Jacobi eigendecomposition",
        iters: max_sweeps,
    })
}

/// Thin SVD `m = u diag(sigma) v^T` by one-sided Jacobi on the columns.
///
/// Requires `rows >= cols`; `u` is rows x cols with zero columns where the
/// corresponding singular value vanishes, `v` is cols x cols orthogonal, and
/// `sigma` is nonnegative and unsorted.
fn one_sided_jacobi(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix), LinalgError> {
    assert!(m.rows() >= m.cols(), "one-sided Jacobi needs a tall matrix");
    let n = m.cols();
    let mut u = m.clone();
    let mut v = DenseMatrix::identity(n);
    let scale = m.max_abs().max(1e-300);
    let tol = 1e-14 * scale * scale;
    let max_sweeps = 60;
    let col_dot = |mat: &DenseMatrix, i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for r in 0..mat.rows() {
            acc += mat.get(r, i) * mat.get(r, j);
        }
        acc
    };
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let aii = col_dot(&u, i, i);
                let ajj = col_dot(&u, j, j);
                let aij = col_dot(&u, i, j);
                if aij.abs() <= tol + 1e-14 * (aii * ajj).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = 0.5 * (ajj - aii) / aij;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..u.rows() {
                    let uri = u.get(r, i);
                    let urj = u.get(r, j);
                    u.set(r, i, c * uri - s * urj);
                    u.set(r, j, s * uri + c * urj);
                }
                for r in 0..n {
                    let vri = v.get(r, i);
                    let vrj = v.get(r, j);
                    v.set(r, i, c * vri - s * vrj);
                    v.set(r, j, s * vri + c * vrj);
                }
            }
        }
        if !rotated {
            let mut sigma = vec![0.0; n];
            for i in 0..n {
                let s = col_dot(&u, i, i).max(0.0).sqrt();
                sigma[i] = s;
                if s > 1e-300 {
                    for r in 0..u.rows() {
                        u.set(r, i, u.get(r, i) / s);
                    }
                } else {
                    for r in 0..u.rows() {
                        u.set(r, i, 0.0);
                    }
                }
            }
            return Ok((u, sigma, v));
        }
    }
    Err(LinalgError::IterationLimit {
        op: "one-sided Jacobi SVD",
        iters: max_sweeps,
    })
}

/// Singular value decomposition for any shape, via the tall case.
pub fn svd(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix), LinalgError> {
    if m.rows() >= m.cols() {
        one_sided_jacobi(m)
    } else {
        let (u, sigma, v) = one_sided_jacobi(&m.transpose())?;
        Ok((v, sigma, u))
    }
}

/// Moore-Penrose pseudo-inverse with relative rank cutoff [`RANK_TOL`].
pub fn pseudo_inverse(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if m.max_abs() == 0.0 {
        return Ok(DenseMatrix::zeros(m.cols(), m.rows()));
    }
    let (u, sigma, v) = svd(m)?;
    let smax = sigma.iter().fold(0.0_f64, |a, b| a.max(*b));
    let cutoff = RANK_TOL * smax;
    let mut out = DenseMatrix::zeros(m.cols(), m.rows());
    for (k, s) in sigma.iter().enumerate() {
        if *s <= cutoff {
            continue;
        }
        let inv = 1.0 / s;
        for r in 0..m.cols() {
            let vr = v.get(r, k);
            if vr == 0.0 {
                continue;
            }
            for c in 0..m.rows() {
                out.set(r, c, out.get(r, c) + vr * inv * u.get(c, k));
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis of the kernel, as matrix columns; `None` when trivial.
///
/// Computed from the eigenvectors of M^T M with eigenvalues below a cutoff
/// sitting above the eigensolver noise floor for exactly singular inputs.
pub fn kernel_basis(m: &DenseMatrix) -> Result<Option<DenseMatrix>, LinalgError> {
    let gram = m.transpose().matmul(m)?;
    let (eig, q) = jacobi_eigh(&gram, 100)?;
    let lmax = eig.iter().fold(0.0_f64, |a, b| a.max(*b));
    let cutoff = 1e-13 * lmax.max(1e-300) + 1e-28;
    let idx: Vec<usize> = (0..eig.len()).filter(|&i| eig[i] <= cutoff).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let mut basis = DenseMatrix::zeros(m.cols(), idx.len());
    for (c_out, &c_in) in idx.iter().enumerate() {
        for r in 0..m.cols() {
            basis.set(r, c_out, q.get(r, c_in));
        }
    }
    Ok(Some(basis))
}

/// Orthogonal projector onto the kernel of `m`.
pub fn kernel_projector(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    match kernel_basis(m)? {
        None => Ok(DenseMatrix::zeros(m.cols(), m.cols())),
        Some(k) => k.matmul(&k.transpose()),
    }
}

/// Symmetric positive semidefinite square root.
pub fn sqrt_psd(s: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let (eig, q) = jacobi_eigh(s, 100)?;
    let scale = s.max_abs().max(1e-300);
    let min_eig = eig.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if min_eig < -1e-9 * scale {
        return Err(LinalgError::NotPsd { min_eig });
    }
    let n = s.rows();
    let mut root = DenseMatrix::zeros(n, n);
    for k in 0..n {
        let sq = eig[k].max(0.0).sqrt();
        if sq == 0.0 {
            continue;
        }
        for r in 0..n {
            let qrk = q.get(r, k);
            if qrk == 0.0 {
                continue;
            }
            for c in 0..n {
                root.set(r, c, root.get(r, c) + sq * qrk * q.get(c, k));
            }
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            let sym = 0.5 * (root.get(r, c) + root.get(c, r));
            root.set(r, c, sym);
            root.set(c, r, sym);
        }
    }
    Ok(root)
}

/// Bounded linear map with a cached norm estimate and classification flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    matrix: DenseMatrix,
    norm: f64,
    isometry: bool,
    coisometry: bool,
}

impl LinearMap {
    /// Wraps a matrix, estimating its norm and classifying it.
    ///
    /// `isometry` means M^T M = Id on the domain, `coisometry` means
    /// M M^T = Id on the codomain, both within [`CLASS_TOL`].
    pub fn new(matrix: DenseMatrix) -> Result<Self, LinalgError> {
        let norm = operator_norm(&matrix, 1e-12, 10_000)?;
        let gram_in = matrix.transpose().matmul(&matrix)?;
        let gram_out = matrix.matmul(&matrix.transpose())?;
        let isometry = gram_in
            .sub(&DenseMatrix::identity(matrix.cols()))?
            .max_abs()
            <= CLASS_TOL;
        let coisometry = gram_out
            .sub(&DenseMatrix::identity(matrix.rows()))?
            .max_abs()
            <= CLASS_TOL;
        Ok(LinearMap {
            matrix,
            norm,
            isometry,
            coisometry,
        })
    }

    /// Identity map on the given dimension.
    pub fn identity(dim: usize) -> Self {
        LinearMap {
            matrix: DenseMatrix::identity(dim),
            norm: 1.0,
            isometry: true,
            coisometry: true,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Cached spectral norm estimate.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_isometry(&self) -> bool {
        self.isometry
    }

    pub fn is_coisometry(&self) -> bool {
        self.coisometry
    }

    /// Domain dimension.
    pub fn domain_dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Codomain dimension.
    pub fn codomain_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector, LinalgError> {
        self.matrix.matvec(x)
    }

    /// Applies the adjoint (the transpose in coordinates).
    pub fn apply_adjoint(&self, y: &Vector) -> Result<Vector, LinalgError> {
        self.matrix.matvec_t(y)
    }
}

impl Serialize for LinearMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.matrix.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let matrix = DenseMatrix::deserialize(deserializer)?;
        LinearMap::new(matrix).map_err(D::Error::custom)
    }
}

/// Inner product on a space: the standard dot product, or the metric induced
/// by a linear map `L` via `<x, y> = <Lx, Ly> + <P x, y>` with `P` the
/// orthogonal projector onto the kernel of `L`.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerProduct {
    Standard {
        dim: usize,
    },
    Weighted {
        map: LinearMap,
        kernel_proj: DenseMatrix,
        gram: DenseMatrix,
    },
}

impl InnerProduct {
    pub fn standard(dim: usize) -> Result<Self, LinalgError> {
        check_dim(dim)?;
        if dim == 0 {
            return Err(LinalgError::EmptyDimension {
                context: "inner product",
            });
        }
        Ok(InnerProduct::Standard { dim })
    }

    /// Builds the weighted inner product for `map`, validating that the Gram
    /// matrix M^T M + P_ker is positive definite.
    pub fn weighted(map: LinearMap) -> Result<Self, LinalgError> {
        let kernel_proj = kernel_projector(map.matrix())?;
        let gram = map
            .matrix()
            .transpose()
            .matmul(map.matrix())?
            .add(&kernel_proj)?;
        let (eig, _) = jacobi_eigh(&gram, 100)?;
        let min_eig = eig.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        if min_eig <= 1e-12 {
            return Err(LinalgError::NotSpd { min_eig });
        }
        Ok(InnerProduct::Weighted {
            map,
            kernel_proj,
            gram,
        })
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        match self {
            InnerProduct::Standard { dim } => *dim,
            InnerProduct::Weighted { map, .. } => map.domain_dim(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum InnerProductRepr {
    Standard { dim: usize },
    Weighted { map: LinearMap },
}

impl Serialize for InnerProduct {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            InnerProduct::Standard { dim } => InnerProductRepr::Standard { dim: *dim },
            InnerProduct::Weighted { map, .. } => InnerProductRepr::Weighted { map: map.clone() },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InnerProduct {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match InnerProductRepr::deserialize(deserializer)? {
            InnerProductRepr::Standard { dim } => {
                InnerProduct::standard(dim).map_err(D::Error::custom)
            }
            InnerProductRepr::Weighted { map } => {
                InnerProduct::weighted(map).map_err(D::Error::custom)
            }
        }
    }
}

/// Inner product of two vectors under the given metric.
pub fn weighted_dot(ip: &InnerProduct, x: &Vector, y: &Vector) -> Result<f64, LinalgError> {
    if x.dim() != ip.dim() {
        return Err(LinalgError::DimensionMismatch {
            context: "inner product left operand",
            expected: ip.dim(),
            got: x.dim(),
        });
    }
    if y.dim() != ip.dim() {
        return Err(LinalgError::DimensionMismatch {
            context: "inner product right operand",
            expected: ip.dim(),
            got: y.dim(),
        });
    }
    match ip {
        InnerProduct::Standard { .. } => Ok(x.dot(y)),
        InnerProduct::Weighted { gram, .. } => {
            let gy = gram.matvec(y)?;
            Ok(x.dot(&gy))
        }
    }
}
