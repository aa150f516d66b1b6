//! Sampling diagnostics for operator expressions: graph sampling, graph
//! metrics, monotonicity moduli, Fitzpatrick inequality checks, a
//! definition-level resolvent oracle, and parameter sweeps with CSV output.
//!
//! Every sup-type quantity is estimated from below by sampling and reported
//! with its sample count; inequalities are always tested in the direction
//! that sampling cannot falsely confirm. All randomness flows through seeded
//! splitmix64/xoshiro streams, so identical inputs reproduce bit-identical
//! reports.

use crate::calculus::{
    resolvent, AverageTerm, CalculusError, OperatorExpr, ReparamOptions, WeightedMode,
};
use crate::linalg::{
    kernel_basis, pseudo_inverse, svd, weighted_dot, DenseMatrix, InnerProduct, LinalgError,
    LinearMap, Vector,
};
use crate::operators::{inclusion_residual, Atom, OperatorError, ResolventQuery};
use crate::rng::{splitmix64, Rng};
use serde::{Deserialize, Serialize};

/// Relative tolerance for the kernel membership test in the Fitzpatrick check.
pub const KERNEL_TOL: f64 = 1e-9;

/// Spatial dimension cap for the brute-force inclusion oracle.
pub const ORACLE_DIM_CAP: usize = 3;

/// Cap on the free-direction count of a certificate search.
const CERT_DIM_CAP: usize = 4;

const CERT_COARSE: usize = 11;
const CERT_REFINE: usize = 7;
const CERT_LEVELS: usize = 20;
const CERT_SHRINK: f64 = 0.45;

/// Errors raised by the diagnostics in this module.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    Calculus(CalculusError),
    Operator(OperatorError),
    Linalg(LinalgError),
    /// A scalar argument fell outside its admissible range.
    InvalidParameter { context: &'static str, value: f64 },
    /// A sampling routine needs more points than were requested or kept.
    TooFewSamples {
        context: &'static str,
        minimum: usize,
        got: usize,
    },
    /// Mismatched space dimensions between arguments.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// Every sampled pair fell below the pairing threshold.
    AllPairsDegenerate,
    /// The probe point fails the kernel condition of the inequality.
    KernelViolation { deviation: f64 },
    /// The oracle found two separated near-zero minima.
    OracleAmbiguous { first: Vector, second: Vector },
    /// The oracle could not drive the graph residual near zero.
    OracleInconclusive { best_score: f64 },
    /// The oracle only handles small spatial dimensions.
    OracleDimension { dim: usize },
    /// A certificate search would need too many free directions.
    CertificateTooLarge { dim: usize },
    /// No hypothesis yields the a-priori limit bound.
    BoundUnavailable { context: &'static str },
    /// A sweep configuration is malformed.
    InvalidSweep { reason: String },
}

impl std::fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalysisError::Calculus(e) => write!(f, "{e}"),
            AnalysisError::Operator(e) => write!(f, "{e}"),
            AnalysisError::Linalg(e) => write!(f, "{e}"),
            AnalysisError::InvalidParameter { context, value } => {
                write!(f, "invalid {context}: {value}")
            }
            AnalysisError::TooFewSamples {
                context,
                minimum,
                got,
            } => write!(f, "{context} needs at least {minimum} samples, got {got}"),
            AnalysisError::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            AnalysisError::AllPairsDegenerate => {
                write!(f, "all sampled pairs fall below the pairing threshold")
            }
            AnalysisError::KernelViolation { deviation } => {
                write!(
                    f,
                    "point violates the kernel condition (deviation {deviation:.3e})"
                )
            }
            AnalysisError::OracleAmbiguous { .. } => {
                write!(f, "grid search found two separated near-zero minima")
            }
            AnalysisError::OracleInconclusive { best_score } => {
                write!(
                    f,
                    "grid search could not certify a solution (best residual {best_score:.3e})"
                )
            }
            AnalysisError::OracleDimension { dim } => {
                write!(
                    f,
                    "oracle supports dimensions up to {ORACLE_DIM_CAP}, got {dim}"
                )
            }
            AnalysisError::CertificateTooLarge { dim } => {
                write!(f, "certificate search needs {dim} free directions, cap is {CERT_DIM_CAP}")
            }
            AnalysisError::BoundUnavailable { context } => {
                write!(f, "{context}: no bound hypothesis applies")
            }
            AnalysisError::InvalidSweep { reason } => write!(f, "invalid sweep config: {reason}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<CalculusError> for AnalysisError {
    fn from(e: CalculusError) -> Self {
        AnalysisError::Calculus(e)
    }
}

impl From<OperatorError> for AnalysisError {
    fn from(e: OperatorError) -> Self {
        AnalysisError::Operator(e)
    }
}

impl From<LinalgError> for AnalysisError {
    fn from(e: LinalgError) -> Self {
        AnalysisError::Linalg(e)
    }
}

/// Seed of the `index`-th substream of the splitmix64 sequence started at
/// `base`: the state is jumped directly to position `index` and mixed once.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut state = base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix64(&mut state)
}

/// Graph points of an operator obtained through the Minty parametrization:
/// each ball sample `y` yields the pair `(J y, (y - J y) / gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub points: Vec<(Vector, Vector)>,
    pub gamma_used: f64,
    pub region_radius: f64,
    pub seed: u64,
}

/// Sampled lower estimate of the monotonicity modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub beta_hat: f64,
    pub pair_count: usize,
    pub inner_product: InnerProduct,
}

/// One measurement comparing two operators: the resolvent-gap metric at a
/// probe parameter together with truncated-graph distance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Probe resolvent parameter used for the gap metric.
    pub gamma: f64,
    /// Radius of the ball over which the resolvent gap was maximized.
    pub delta: f64,
    /// Truncation radius for the graph-distance estimates.
    pub rho: f64,
    /// Sampled lower estimate of the sup resolvent gap.
    pub d_gamma_delta: f64,
    /// Sampled excess between the truncated graphs in the product norm.
    pub haus_lower: f64,
    /// Upper bound on the truncated graph distance.
    pub haus_upper_bound: f64,
}

/// Outcome of a Fitzpatrick inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitzpatrickReport {
    pub samples: usize,
    /// Closed-form value of the right-hand side.
    pub rhs_exact: f64,
    /// Sampled lower approximation of the right-hand side.
    pub rhs_sampled: f64,
    /// Largest sampled value of the left-hand-side objective.
    pub max_inner: f64,
    /// `max_inner - rhs_exact`; the inequality asks this to stay below slack.
    pub violation: f64,
}

fn check_positive(context: &'static str, value: f64) -> Result<f64, AnalysisError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(AnalysisError::InvalidParameter { context, value });
    }
    Ok(value)
}

fn check_count(context: &'static str, minimum: usize, got: usize) -> Result<(), AnalysisError> {
    if got < minimum {
        return Err(AnalysisError::TooFewSamples {
            context,
            minimum,
            got,
        });
    }
    Ok(())
}

/// Samples the graph of `expr` through the Minty parametrization: draws `n`
/// points `y` uniformly in the ball of the given radius and records
/// `(J_{gamma} y, (y - J_{gamma} y)/gamma)`.
pub fn minty_sample(
    expr: &OperatorExpr,
    gamma: f64,
    radius: f64,
    n: usize,
    seed: u64,
) -> Result<GraphSample, AnalysisError> {
    check_positive("sampling radius", radius)?;
    check_count("graph sample", 2, n)?;
    let opts = ReparamOptions::default();
    let dim = expr.dim();
    let mut rng = Rng::new(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let y = Vector::new(rng.in_ball(dim, radius))?;
        let q = ResolventQuery::new(gamma, y.clone())?;
        let p = resolvent(expr, &q, &opts)?;
        let xstar = y.sub(&p).scale(1.0 / gamma);
        points.push((p, xstar));
    }
    Ok(GraphSample {
        points,
        gamma_used: gamma,
        region_radius: radius,
        seed,
    })
}

/// Pairing threshold matched to the sampling radius.
pub fn default_pair_epsilon(radius: f64) -> f64 {
    1e-8 * radius
}

/// Minimum Rayleigh quotient `<dx, dx*> / <dx, dx>` over all unordered pairs
/// of graph points, in the given inner product. Pairs whose base distance
/// falls below `pair_epsilon` are skipped to avoid 0/0 quotients.
pub fn modulus_estimate(
    sample: &GraphSample,
    ip: &InnerProduct,
    pair_epsilon: f64,
) -> Result<ModulusReport, AnalysisError> {
    check_count("modulus estimate", 2, sample.points.len())?;
    if let Some((p, _)) = sample.points.first() {
        if p.dim() != ip.dim() {
            return Err(AnalysisError::DimensionMismatch {
                context: "modulus inner product",
                expected: p.dim(),
                got: ip.dim(),
            });
        }
    }
    let mut beta = f64::INFINITY;
    let mut pair_count = 0usize;
    for i in 0..sample.points.len() {
        for j in i + 1..sample.points.len() {
            let dx = sample.points[i].0.sub(&sample.points[j].0);
            let ds = sample.points[i].1.sub(&sample.points[j].1);
            let nx2 = weighted_dot(ip, &dx, &dx)?;
            if nx2.sqrt() <= pair_epsilon {
                continue;
            }
            let ratio = weighted_dot(ip, &dx, &ds)? / nx2;
            if ratio < beta {
                beta = ratio;
            }
            pair_count += 1;
        }
    }
    if pair_count == 0 {
        return Err(AnalysisError::AllPairsDegenerate);
    }
    Ok(ModulusReport {
        beta_hat: beta,
        pair_count,
        inner_product: ip.clone(),
    })
}

/// Evaluation set for sup-type estimates over a ball: `n` interior samples,
/// their radial projections onto the sphere, and the signed axis extremes.
fn evaluation_points(
    dim: usize,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector>, AnalysisError> {
    let mut rng = Rng::new(seed);
    let mut pts = Vec::with_capacity(2 * n + 2 * dim);
    let mut boundary = Vec::with_capacity(n);
    for _ in 0..n {
        let u = Vector::new(rng.in_ball(dim, delta))?;
        let norm = u.norm();
        if norm > 1e-12 * delta.max(1.0) {
            boundary.push(u.scale(delta / norm));
        }
        pts.push(u);
    }
    pts.extend(boundary);
    for axis in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[axis] = sign * delta;
            pts.push(Vector::new(e)?);
        }
    }
    Ok(pts)
}

/// Sampled lower estimate of `sup_{|x| <= delta} |J_{gamma A1} x - J_{gamma A2} x|`.
pub fn d_gamma_delta(
    a1: &OperatorExpr,
    a2: &OperatorExpr,
    gamma: f64,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    if a1.dim() != a2.dim() {
        return Err(AnalysisError::DimensionMismatch {
            context: "resolvent gap operands",
            expected: a1.dim(),
            got: a2.dim(),
        });
    }
    check_positive("gap radius", delta)?;
    check_count("resolvent gap sample", 2, n)?;
    let opts = ReparamOptions::default();
    let mut worst = 0.0f64;
    for y in evaluation_points(a1.dim(), delta, n, seed)? {
        let q = ResolventQuery::new(gamma, y)?;
        let j1 = resolvent(a1, &q, &opts)?;
        let j2 = resolvent(a2, &q, &opts)?;
        let gap = j1.sub(&j2).norm();
        if gap > worst {
            worst = gap;
        }
    }
    Ok(worst)
}

fn truncate_graph(sample: &GraphSample, rho: f64) -> Vec<(Vector, Vector)> {
    sample
        .points
        .iter()
        .filter(|(x, xs)| x.norm().hypot(xs.norm()) <= rho)
        .cloned()
        .collect()
}

fn graph_excess(from: &[(Vector, Vector)], to: &[(Vector, Vector)]) -> f64 {
    let mut worst = 0.0f64;
    for (x, xs) in from {
        let mut nearest = f64::INFINITY;
        for (y, ys) in to {
            let d = x.sub(y).norm().hypot(xs.sub(ys).norm());
            if d < nearest {
                nearest = d;
            }
        }
        if nearest > worst {
            worst = nearest;
        }
    }
    worst
}

/// Estimates the distance between the graphs of two operators truncated to
/// the product-norm ball of radius `rho`.
///
/// The upper bound is `max(1, 1/gamma_probe) * d_{gamma_probe, (1+gamma_probe) rho}`;
/// the lower estimate is the sampled excess between the truncated graphs in
/// the product norm, with both graphs sampled from the same seed so that
/// identical operators report exactly zero. Both quantities are estimates:
/// the lower one is a nearest-neighbor figure over finite samples.
pub fn hausdorff_estimate(
    a1: &OperatorExpr,
    a2: &OperatorExpr,
    rho: f64,
    gamma_probe: f64,
    n: usize,
    seed: u64,
) -> Result<MetricRecord, AnalysisError> {
    check_positive("truncation radius", rho)?;
    check_positive("probe parameter", gamma_probe)?;
    let delta = (1.0 + gamma_probe) * rho;
    let d = d_gamma_delta(a1, a2, gamma_probe, delta, n, seed)?;
    let upper = 1.0f64.max(1.0 / gamma_probe) * d;
    let s1 = minty_sample(a1, gamma_probe, delta, n, seed)?;
    let s2 = minty_sample(a2, gamma_probe, delta, n, seed)?;
    let t1 = truncate_graph(&s1, rho);
    let t2 = truncate_graph(&s2, rho);
    let lower = if t1.is_empty() || t2.is_empty() {
        0.0
    } else {
        graph_excess(&t1, &t2).max(graph_excess(&t2, &t1))
    };
    Ok(MetricRecord {
        gamma: gamma_probe,
        delta,
        rho,
        d_gamma_delta: d,
        haus_lower: lower,
        haus_upper_bound: upper,
    })
}

fn fitzpatrick_objective(j: &Vector, y: &Vector, x: &Vector, xstar: &Vector) -> f64 {
    let diff = y.sub(j);
    j.dot(xstar) + x.dot(&diff) - j.dot(&diff)
}

fn fitzpatrick_samples(
    node: &OperatorExpr,
    x: &Vector,
    xstar: &Vector,
    n: usize,
    seed: u64,
) -> Result<(usize, f64), AnalysisError> {
    let opts = ReparamOptions::default();
    let dim = node.dim();
    let radius = 2.0 * (1.0 + x.norm() + xstar.norm());
    let mut rng = Rng::new(seed);
    let mut ys = Vec::with_capacity(n);
    ys.push(Vector::zeros(dim));
    for _ in 1..n {
        ys.push(Vector::new(rng.in_ball(dim, radius))?);
    }
    let mut max_inner = f64::NEG_INFINITY;
    for y in &ys {
        let q = ResolventQuery::new(1.0, y.clone())?;
        let j = resolvent(node, &q, &opts)?;
        let val = fitzpatrick_objective(&j, y, x, xstar);
        if val > max_inner {
            max_inner = val;
        }
    }
    Ok((ys.len(), max_inner))
}

/// Sampled lower approximation of the Fitzpatrick value `F_{gamma B}(u, u*)`
/// for `B = alpha Id`, taken over graph points of `B` drawn by Minty
/// sampling.
fn sampled_scaled_fitzpatrick(
    alpha: f64,
    gamma: f64,
    u: &Vector,
    ustar: &Vector,
    n: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let c = gamma * alpha;
    let dim = u.dim();
    let peak = (ustar.norm() + c * u.norm()) / (2.0 * c);
    let radius = 2.0 * (1.0 + u.norm() + ustar.norm() + peak);
    let atom = Atom::scaled_identity(dim, alpha)?;
    let sample = minty_sample(&OperatorExpr::leaf(atom), 1.0, radius, n, seed)?;
    let mut best = f64::NEG_INFINITY;
    for (v, vs) in &sample.points {
        let val = v.dot(ustar) + u.dot(vs) * gamma - v.dot(vs) * gamma;
        if val > best {
            best = val;
        }
    }
    Ok(best)
}

fn exact_scaled_fitzpatrick(alpha: f64, gamma: f64, u: &Vector, ustar: &Vector) -> f64 {
    let c = gamma * alpha;
    let w = ustar.add(&u.scale(c));
    w.dot(&w) / (4.0 * c)
}

/// Checks the composition Fitzpatrick inequality: for a map with norm at
/// most one and a probe `x` in the kernel of `Id - L^T L`, every sampled
/// value of the left-hand-side objective for `gamma (L composed B)` must stay
/// below `F_{gamma B}(L x, L x*)`. The target `B` must be a positive scaled
/// identity so that the right-hand side has a closed form.
pub fn fitzpatrick_check(
    map: &LinearMap,
    target: &Atom,
    gamma: f64,
    x: &Vector,
    xstar: &Vector,
    n: usize,
    seed: u64,
) -> Result<FitzpatrickReport, AnalysisError> {
    check_positive("resolvent parameter", gamma)?;
    check_count("fitzpatrick sample", 2, n)?;
    let norm = map.norm();
    if norm > 1.0 + 1e-9 {
        return Err(AnalysisError::InvalidParameter {
            context: "composition map norm",
            value: norm,
        });
    }
    let alpha = match target {
        Atom::ScaledIdentity { alpha, .. } if *alpha > 0.0 => *alpha,
        _ => {
            return Err(AnalysisError::InvalidParameter {
                context: "fitzpatrick target scale",
                value: f64::NAN,
            })
        }
    };
    if target.dim() != map.codomain_dim() {
        return Err(AnalysisError::DimensionMismatch {
            context: "fitzpatrick target",
            expected: map.codomain_dim(),
            got: target.dim(),
        });
    }
    if x.dim() != map.domain_dim() || xstar.dim() != map.domain_dim() {
        return Err(AnalysisError::DimensionMismatch {
            context: "fitzpatrick probe",
            expected: map.domain_dim(),
            got: if x.dim() != map.domain_dim() {
                x.dim()
            } else {
                xstar.dim()
            },
        });
    }
    let ltlx = map.apply_adjoint(&map.apply(x)?)?;
    let deviation = x.sub(&ltlx).norm();
    if deviation > KERNEL_TOL * x.norm().max(1.0) {
        return Err(AnalysisError::KernelViolation { deviation });
    }
    let node = OperatorExpr::scale_left(
        gamma,
        OperatorExpr::compose(map.clone(), gamma, OperatorExpr::leaf(target.clone()))?,
    )?;
    let (samples, max_inner) = fitzpatrick_samples(&node, x, xstar, n, seed)?;
    let u = map.apply(x)?;
    let ustar = map.apply(xstar)?;
    let rhs_exact = exact_scaled_fitzpatrick(alpha, gamma, &u, &ustar);
    let rhs_sampled =
        sampled_scaled_fitzpatrick(alpha, gamma, &u, &ustar, n, derive_seed(seed, 1))?;
    Ok(FitzpatrickReport {
        samples,
        rhs_exact,
        rhs_sampled,
        max_inner,
        violation: max_inner - rhs_exact,
    })
}

/// Checks the resolvent-average Fitzpatrick inequality
/// `F_{gamma avg} <= sum_k w_k F_{gamma B_k}` for scaled-identity terms
/// `B_k = beta_k Id` given as `(weight, beta)` pairs.
pub fn fitzpatrick_average_check(
    terms: &[(f64, f64)],
    dim: usize,
    gamma: f64,
    x: &Vector,
    xstar: &Vector,
    n: usize,
    seed: u64,
) -> Result<FitzpatrickReport, AnalysisError> {
    check_positive("resolvent parameter", gamma)?;
    check_count("fitzpatrick sample", 2, n)?;
    check_count("average terms", 1, terms.len())?;
    let mut sum = 0.0;
    for (w, beta) in terms {
        if !w.is_finite() || *w <= 0.0 {
            return Err(AnalysisError::InvalidParameter {
                context: "average weight",
                value: *w,
            });
        }
        check_positive("average term scale", *beta)?;
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(AnalysisError::InvalidParameter {
            context: "average weight sum",
            value: sum,
        });
    }
    if x.dim() != dim || xstar.dim() != dim {
        return Err(AnalysisError::DimensionMismatch {
            context: "fitzpatrick probe",
            expected: dim,
            got: if x.dim() != dim { x.dim() } else { xstar.dim() },
        });
    }
    let mut avg_terms = Vec::with_capacity(terms.len());
    for (w, beta) in terms {
        avg_terms.push(AverageTerm {
            weight: *w,
            inner: OperatorExpr::leaf(Atom::scaled_identity(dim, *beta)?),
        });
    }
    let node = OperatorExpr::scale_left(gamma, OperatorExpr::average(gamma, avg_terms)?)?;
    let (samples, max_inner) = fitzpatrick_samples(&node, x, xstar, n, seed)?;
    let mut rhs_exact = 0.0;
    let mut rhs_sampled = 0.0;
    for (k, (w, beta)) in terms.iter().enumerate() {
        rhs_exact += w * exact_scaled_fitzpatrick(*beta, gamma, x, xstar);
        rhs_sampled += w
            * sampled_scaled_fitzpatrick(*beta, gamma, x, xstar, n, derive_seed(seed, k as u64 + 1))?;
    }
    Ok(FitzpatrickReport {
        samples,
        rhs_exact,
        rhs_sampled,
        max_inner,
        violation: max_inner - rhs_exact,
    })
}

/// Grid parameters for the inclusion oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    /// Half-width of the search cube; defaults to `2 (|x| + 2)`.
    pub half_width: Option<f64>,
    pub coarse_points: usize,
    pub refine_points: usize,
    pub refine_levels: usize,
    pub shrink: f64,
    /// Minimum distance for two minima to count as distinct.
    pub ambiguity_separation: f64,
    /// Residual level below which a refined minimum counts as a solution.
    pub ambiguity_tol: f64,
    /// Residual level above which the search is declared inconclusive.
    pub score_tol: f64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid {
            half_width: None,
            coarse_points: 15,
            refine_points: 9,
            refine_levels: 22,
            shrink: 0.35,
            ambiguity_separation: 1e-3,
            ambiguity_tol: 1e-6,
            score_tol: 1e-3,
        }
    }
}

fn walk_cube(
    center: &[f64],
    half: f64,
    per_axis: usize,
    visit: &mut dyn FnMut(&[f64]) -> Result<(), AnalysisError>,
) -> Result<(), AnalysisError> {
    let k = center.len();
    let total = per_axis.pow(k as u32);
    let denom = (per_axis - 1) as f64;
    let mut pt = vec![0.0; k];
    for idx in 0..total {
        let mut rest = idx;
        for (axis, c) in center.iter().enumerate() {
            let step = rest % per_axis;
            rest /= per_axis;
            pt[axis] = c - half + 2.0 * half * (step as f64) / denom;
        }
        visit(&pt)?;
    }
    Ok(())
}

fn cube_minimum(
    score: &dyn Fn(&[f64]) -> Result<f64, AnalysisError>,
    center: &[f64],
    half: f64,
    per_axis: usize,
) -> Result<(Vec<f64>, f64), AnalysisError> {
    let mut best_pt = center.to_vec();
    let mut best = score(center)?;
    walk_cube(center, half, per_axis, &mut |pt| {
        let val = score(pt)?;
        if val < best {
            best = val;
            best_pt = pt.to_vec();
        }
        Ok(())
    })?;
    Ok((best_pt, best))
}

fn shrink_refine(
    score: &dyn Fn(&[f64]) -> Result<f64, AnalysisError>,
    start: &[f64],
    start_val: f64,
    width: f64,
    levels: usize,
    per_axis: usize,
    shrink: f64,
) -> Result<(Vec<f64>, f64), AnalysisError> {
    let mut center = start.to_vec();
    let mut best = start_val;
    let mut half = width;
    for _ in 0..levels {
        half *= shrink;
        let (pt, val) = cube_minimum(score, &center, half, per_axis)?;
        if val < best {
            best = val;
            center = pt;
        }
    }
    Ok((center, best))
}

/// Minimizes a certificate residual over `k` free directions by coarse grid
/// search plus shrinking refinement around the incumbent.
fn certificate_min(
    score: &dyn Fn(&[f64]) -> Result<f64, AnalysisError>,
    k: usize,
    radius: f64,
) -> Result<f64, AnalysisError> {
    if k == 0 {
        return score(&[]);
    }
    let center = vec![0.0; k];
    let (pt, val) = cube_minimum(score, &center, radius, CERT_COARSE)?;
    let (_, refined) = shrink_refine(score, &pt, val, radius, CERT_LEVELS, CERT_REFINE, CERT_SHRINK)?;
    Ok(refined)
}

/// Graph-membership form of an expression: scores a candidate pair
/// `(p, p*)` by the defining description of each node, never by resolvent
/// formulas. Composition-type nodes carry an existential certificate that is
/// searched over its free directions.
enum Lowered {
    Atom(Atom),
    Swap(Box<Lowered>),
    ShiftValue { z: Vector, inner: Box<Lowered> },
    ShiftPoint { w: Vector, inner: Box<Lowered> },
    ScaleValue { rho: f64, inner: Box<Lowered> },
    ScalePoint { rho: f64, inner: Box<Lowered> },
    Tilt { rho: f64, inner: Box<Lowered> },
    Slide { lambda: f64, inner: Box<Lowered> },
    Blocks { dims: Vec<usize>, inners: Vec<Lowered> },
    Search(SearchLowered),
    ChainSearch(ChainLowered),
    SplitSearch(SplitLowered),
}

/// Certificate data for composition and cocomposition graphs: a pair
/// `(p, p*)` belongs to the graph exactly when some `v` satisfies the linear
/// constraint through `back` and the inner membership built from `forward`.
struct SearchLowered {
    forward: DenseMatrix,
    back: DenseMatrix,
    base: DenseMatrix,
    kernel: Option<DenseMatrix>,
    gamma: f64,
    co: bool,
    inner: Box<Lowered>,
}

struct ChainLowered {
    links: Vec<Lowered>,
    gamma: f64,
    block: usize,
    adjoint: DenseMatrix,
    base: DenseMatrix,
    kernel: Option<DenseMatrix>,
}

struct SplitLowered {
    first: Box<Lowered>,
    second: Box<Lowered>,
    block: usize,
}

fn kernel_width(kernel: &Option<DenseMatrix>) -> usize {
    kernel.as_ref().map_or(0, DenseMatrix::cols)
}

fn offset_by_kernel(
    base: &Vector,
    kernel: &Option<DenseMatrix>,
    t: &[f64],
) -> Result<Vector, AnalysisError> {
    match kernel {
        None => Ok(base.clone()),
        Some(k) => {
            let tv = Vector::from_slice(t)?;
            Ok(base.add(&k.matvec(&tv)?))
        }
    }
}

fn make_search(
    forward: DenseMatrix,
    back: DenseMatrix,
    gamma: f64,
    co: bool,
    inner: Lowered,
) -> Result<Lowered, AnalysisError> {
    let base = pseudo_inverse(&back)?;
    let kernel = kernel_basis(&back)?;
    let width = kernel_width(&kernel);
    if width > CERT_DIM_CAP {
        return Err(AnalysisError::CertificateTooLarge { dim: width });
    }
    Ok(Lowered::Search(SearchLowered {
        forward,
        back,
        base,
        kernel,
        gamma,
        co,
        inner: Box::new(inner),
    }))
}

fn stack_scaled_maps(parts: &[(f64, &DenseMatrix)]) -> Result<DenseMatrix, AnalysisError> {
    let cols = parts[0].1.cols();
    let total: usize = parts.iter().map(|(_, m)| m.rows()).sum();
    let mut out = DenseMatrix::zeros(total, cols);
    let mut row0 = 0;
    for (scale, m) in parts {
        for r in 0..m.rows() {
            for c in 0..cols {
                out.set(row0 + r, c, scale * m.get(r, c));
            }
        }
        row0 += m.rows();
    }
    Ok(out)
}

fn scaled_block(weight: f64, inner: Lowered) -> Lowered {
    let sw = weight.sqrt();
    Lowered::ScaleValue {
        rho: sw,
        inner: Box::new(Lowered::ScalePoint {
            rho: 1.0 / sw,
            inner: Box::new(inner),
        }),
    }
}

fn lower(expr: &OperatorExpr) -> Result<Lowered, AnalysisError> {
    match expr {
        OperatorExpr::Leaf { atom } => Ok(Lowered::Atom(atom.clone())),
        OperatorExpr::Inverse { inner } => Ok(Lowered::Swap(Box::new(lower(inner)?))),
        OperatorExpr::ScaleLeft { rho, inner } => Ok(Lowered::ScaleValue {
            rho: *rho,
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::ScaleRight { rho, inner } => Ok(Lowered::ScalePoint {
            rho: *rho,
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::TranslateOut { z, inner } => Ok(Lowered::ShiftValue {
            z: z.clone(),
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::TranslateIn { w, inner } => Ok(Lowered::ShiftPoint {
            w: w.clone(),
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::AddScaledId { rho, inner } => Ok(Lowered::Tilt {
            rho: *rho,
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::Yosida { lambda, inner } => Ok(Lowered::Slide {
            lambda: *lambda,
            inner: Box::new(lower(inner)?),
        }),
        OperatorExpr::Compose { map, gamma, inner } => make_search(
            map.matrix().clone(),
            map.matrix().transpose(),
            *gamma,
            false,
            lower(inner)?,
        ),
        OperatorExpr::Cocompose { map, gamma, inner } => make_search(
            map.matrix().clone(),
            map.matrix().transpose(),
            *gamma,
            true,
            lower(inner)?,
        ),
        OperatorExpr::WeightedCompose {
            map,
            gamma,
            inner,
            mode,
            pinv,
            ..
        } => make_search(
            map.matrix().clone(),
            pinv.clone(),
            *gamma,
            *mode == WeightedMode::Co,
            lower(inner)?,
        ),
        OperatorExpr::PsiLift {
            gamma,
            inner,
            lifted,
            ..
        } => make_search(
            lifted.matrix().clone(),
            lifted.matrix().transpose(),
            *gamma,
            true,
            lower(inner)?,
        ),
        OperatorExpr::Mixture { gamma, terms } | OperatorExpr::Comixture { gamma, terms } => {
            let co = matches!(expr, OperatorExpr::Comixture { .. });
            let mut parts = Vec::with_capacity(terms.len());
            let mut dims = Vec::with_capacity(terms.len());
            let mut inners = Vec::with_capacity(terms.len());
            for t in terms {
                parts.push((t.weight.sqrt(), t.map.matrix()));
                dims.push(t.map.codomain_dim());
                inners.push(scaled_block(t.weight, lower(&t.inner)?));
            }
            let forward = stack_scaled_maps(&parts)?;
            let back = forward.transpose();
            make_search(forward, back, *gamma, co, Lowered::Blocks { dims, inners })
        }
        OperatorExpr::Average { gamma, terms } => {
            let dim = expr.dim();
            let eye = DenseMatrix::identity(dim);
            let mut parts = Vec::with_capacity(terms.len());
            let mut dims = Vec::with_capacity(terms.len());
            let mut inners = Vec::with_capacity(terms.len());
            for t in terms {
                parts.push((t.weight.sqrt(), &eye));
                dims.push(dim);
                inners.push(scaled_block(t.weight, lower(&t.inner)?));
            }
            let parts_ref: Vec<(f64, &DenseMatrix)> =
                parts.iter().map(|(s, m)| (*s, *m)).collect();
            let forward = stack_scaled_maps(&parts_ref)?;
            let back = forward.transpose();
            make_search(forward, back, *gamma, false, Lowered::Blocks { dims, inners })
        }
        OperatorExpr::DouglasRachford { first, second } => {
            Ok(Lowered::SplitSearch(SplitLowered {
                first: Box::new(lower(first)?),
                second: Box::new(lower(second)?),
                block: first.dim(),
            }))
        }
        OperatorExpr::Chain { gamma, links } => {
            let h = links[0].dim();
            if h > CERT_DIM_CAP {
                return Err(AnalysisError::CertificateTooLarge { dim: h });
            }
            let count = links.len();
            let mut adjoint = DenseMatrix::zeros((count - 1) * h, count * h);
            for r in 0..count - 1 {
                for i in 0..h {
                    adjoint.set(r * h + i, r * h + i, 1.0);
                    adjoint.set(r * h + i, (r + 1) * h + i, -1.0);
                }
            }
            let base = pseudo_inverse(&adjoint)?;
            let kernel = kernel_basis(&adjoint)?;
            let mut lowered_links = Vec::with_capacity(count);
            for link in links {
                lowered_links.push(lower(link)?);
            }
            Ok(Lowered::ChainSearch(ChainLowered {
                links: lowered_links,
                gamma: *gamma,
                block: h,
                adjoint,
                base,
                kernel,
            }))
        }
        OperatorExpr::DirectSum { blocks } => {
            let mut dims = Vec::with_capacity(blocks.len());
            let mut inners = Vec::with_capacity(blocks.len());
            for b in blocks {
                dims.push(b.dim());
                inners.push(lower(b)?);
            }
            Ok(Lowered::Blocks { dims, inners })
        }
    }
}

fn split_pair(v: &Vector, dims: &[usize]) -> Vec<Vector> {
    let mut out = Vec::with_capacity(dims.len());
    let mut rest = v.clone();
    for (i, d) in dims.iter().enumerate() {
        if i + 1 == dims.len() {
            out.push(std::mem::replace(&mut rest, Vector::zeros(1)));
        } else {
            let (head, tail) = rest.split_at(*d);
            rest = tail;
            out.push(head);
        }
    }
    out
}

fn blocks_of(v: &Vector, block: usize) -> Vec<Vector> {
    let count = v.dim() / block;
    split_pair(v, &vec![block; count])
}

/// Residual of the membership `q in (expr)(p)` under the lowered form.
fn graph_residual(low: &Lowered, p: &Vector, q: &Vector) -> Result<f64, AnalysisError> {
    match low {
        Lowered::Atom(atom) => Ok(inclusion_residual(atom, p, q, 0.0)?),
        Lowered::Swap(inner) => graph_residual(inner, q, p),
        Lowered::ShiftValue { z, inner } => graph_residual(inner, p, &q.add(z)),
        Lowered::ShiftPoint { w, inner } => graph_residual(inner, &p.sub(w), q),
        Lowered::ScaleValue { rho, inner } => graph_residual(inner, p, &q.scale(1.0 / rho)),
        Lowered::ScalePoint { rho, inner } => graph_residual(inner, &p.scale(*rho), q),
        Lowered::Tilt { rho, inner } => graph_residual(inner, p, &q.sub(&p.scale(*rho))),
        Lowered::Slide { lambda, inner } => graph_residual(inner, &p.sub(&q.scale(*lambda)), q),
        Lowered::Blocks { dims, inners } => {
            let ps = split_pair(p, dims);
            let qs = split_pair(q, dims);
            let mut acc = 0.0;
            for ((pi, qi), inner) in ps.iter().zip(qs.iter()).zip(inners.iter()) {
                let r = graph_residual(inner, pi, qi)?;
                acc += r * r;
            }
            Ok(acc.sqrt())
        }
        Lowered::Search(s) => {
            let g = s.gamma;
            if s.co {
                let v0 = s.base.matvec(q)?;
                let gap = s.back.matvec(&v0)?.sub(q).norm();
                let arg = p.add(&q.scale(g));
                let fwd = s.forward.matvec(&arg)?;
                let radius = 3.0 * (1.0 + v0.norm() + (fwd.norm() + 1.0) / g);
                let width = kernel_width(&s.kernel);
                let minimal = certificate_min(
                    &|t| {
                        let v = offset_by_kernel(&v0, &s.kernel, t)?;
                        let point = fwd.sub(&v.scale(g));
                        graph_residual(&s.inner, &point, &v)
                    },
                    width,
                    radius,
                )?;
                Ok(minimal.hypot(gap))
            } else {
                let v0 = s.base.matvec(p)?;
                let gap = s.back.matvec(&v0)?.sub(p).norm();
                let arg = q.add(&p.scale(1.0 / g));
                let fwd = s.forward.matvec(&arg)?;
                let radius = 3.0 * (1.0 + v0.norm() + fwd.norm());
                let width = kernel_width(&s.kernel);
                let minimal = certificate_min(
                    &|t| {
                        let v = offset_by_kernel(&v0, &s.kernel, t)?;
                        let value = fwd.sub(&v.scale(1.0 / g));
                        graph_residual(&s.inner, &v, &value)
                    },
                    width,
                    radius,
                )?;
                Ok(minimal.hypot(gap))
            }
        }
        Lowered::ChainSearch(c) => {
            let g = c.gamma;
            let target = q.scale(1.0 / g);
            let u0 = c.base.matvec(&target)?;
            let gap = c.adjoint.matvec(&u0)?.sub(&target).norm() * g;
            let arg = p.add(&q.scale(g));
            let lv = c.adjoint.matvec_t(&arg)?;
            let lvb = blocks_of(&lv, c.block);
            let radius = 3.0 * (1.0 + u0.norm() + lv.norm());
            let width = kernel_width(&c.kernel);
            let count = c.links.len();
            let minimal = certificate_min(
                &|t| {
                    let u = offset_by_kernel(&u0, &c.kernel, t)?;
                    let ub = blocks_of(&u, c.block);
                    let mut acc = 0.0;
                    for (j, link) in c.links.iter().enumerate() {
                        let mut value = lvb[j].sub(&ub[j]);
                        if j > 0 && j < count - 1 {
                            value = value.add(&ub[j - 1]);
                        }
                        if j == count - 1 {
                            value = value.add(&ub[0]).add(&ub[count - 2]);
                        }
                        let r = graph_residual(link, &ub[j], &value)?;
                        acc += r * r;
                    }
                    Ok(acc.sqrt())
                },
                width,
                radius,
            )?;
            Ok(minimal.hypot(gap))
        }
        Lowered::SplitSearch(d) => {
            let w = p.add(q);
            let half = p.scale(0.5);
            let radius = 3.0 * (1.0 + p.norm() + w.norm());
            certificate_min(
                &|t| {
                    let tv = Vector::from_slice(t)?;
                    let v1 = half.add(&tv);
                    let v2 = tv.sub(&half);
                    let c1 = w.sub(&v1);
                    let c2 = w.scale(-1.0).sub(&v2);
                    let r1 = graph_residual(&d.first, &v1, &c1)?;
                    let r2 = graph_residual(&d.second, &c2.add(&v1.scale(2.0)), &v2)?;
                    Ok(r1.hypot(r2))
                },
                d.block,
                radius,
            )
        }
    }
}

/// Solves `x in p + gamma (expr)(p)` by brute-force grid search over the
/// membership residual of the defining descriptions, never the resolvent
/// formulas. Dimension is capped at [`ORACLE_DIM_CAP`].
pub fn inclusion_oracle(
    expr: &OperatorExpr,
    gamma: f64,
    x: &Vector,
    grid: &OracleGrid,
) -> Result<Vector, AnalysisError> {
    let dim = expr.dim();
    if dim > ORACLE_DIM_CAP {
        return Err(AnalysisError::OracleDimension { dim });
    }
    if x.dim() != dim {
        return Err(AnalysisError::DimensionMismatch {
            context: "oracle point",
            expected: dim,
            got: x.dim(),
        });
    }
    check_positive("resolvent parameter", gamma)?;
    if grid.coarse_points < 3
        || grid.refine_points < 3
        || grid.refine_levels == 0
        || !(0.0..0.9).contains(&grid.shrink)
    {
        return Err(AnalysisError::InvalidParameter {
            context: "oracle grid",
            value: grid.shrink,
        });
    }
    let low = lower(expr)?;
    let score = |pt: &[f64]| -> Result<f64, AnalysisError> {
        let p = Vector::from_slice(pt)?;
        let q = x.sub(&p).scale(1.0 / gamma);
        graph_residual(&low, &p, &q)
    };
    let width = grid.half_width.unwrap_or(2.0 * (x.norm() + 2.0));
    let center = vec![0.0; dim];
    let mut best_pt = center.clone();
    let mut best_val = f64::INFINITY;
    let mut runner: Option<(Vec<f64>, f64)> = None;
    walk_cube(&center, width, grid.coarse_points, &mut |pt| {
        let val = score(pt)?;
        if val < best_val {
            best_val = val;
            best_pt = pt.to_vec();
        }
        Ok(())
    })?;
    walk_cube(&center, width, grid.coarse_points, &mut |pt| {
        let dist: f64 = pt
            .iter()
            .zip(best_pt.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist >= grid.ambiguity_separation {
            let val = score(pt)?;
            if runner.as_ref().map_or(true, |(_, rv)| val < *rv) {
                runner = Some((pt.to_vec(), val));
            }
        }
        Ok(())
    })?;
    let (refined_pt, refined_val) = shrink_refine(
        &score,
        &best_pt,
        best_val,
        width,
        grid.refine_levels,
        grid.refine_points,
        grid.shrink,
    )?;
    if let Some((rp, rv)) = runner {
        if rv <= 0.1 * (1.0 + x.norm()) {
            let (alt_pt, alt_val) = shrink_refine(
                &score,
                &rp,
                rv,
                width,
                grid.refine_levels,
                grid.refine_points,
                grid.shrink,
            )?;
            let dist: f64 = alt_pt
                .iter()
                .zip(refined_pt.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if refined_val <= grid.ambiguity_tol
                && alt_val <= grid.ambiguity_tol
                && dist >= grid.ambiguity_separation
            {
                return Err(AnalysisError::OracleAmbiguous {
                    first: Vector::from_slice(&refined_pt)?,
                    second: Vector::from_slice(&alt_pt)?,
                });
            }
        }
    }
    if refined_val > grid.score_tol * (1.0 + x.norm()) {
        return Err(AnalysisError::OracleInconclusive {
            best_score: refined_val,
        });
    }
    Ok(Vector::from_slice(&refined_pt)?)
}

/// Limit statements a parameter sweep can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Yosida regularizations converge to the base operator as the
    /// regularization parameter vanishes.
    Yosida,
    /// Cocompositions converge to the adjoint sandwich as the parameter
    /// vanishes, with an a-priori distance bound per row.
    SandwichLimit,
    /// Compositions with vanishing inner scaling converge to the composition
    /// with the declared domain normal cone.
    DomainLimit,
    /// Compositions with growing inner scaling converge to the composition
    /// with the declared zero-set normal cone.
    ZerosLimit,
    /// Compositions depend continuously on the parameter.
    Continuity,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Yosida => "yosida",
            SweepKind::SandwichLimit => "sandwich_limit",
            SweepKind::DomainLimit => "domain_limit",
            SweepKind::ZerosLimit => "zeros_limit",
            SweepKind::Continuity => "continuity",
        }
    }
}

/// Declarative description of a parameter sweep. The varying operator is
/// rebuilt per row from `kind`, `map`, and `atom`; `limit` is the claimed
/// limit operator where the kind requires one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub label: String,
    pub kind: SweepKind,
    /// Strictly monotone grid of the varying parameter.
    pub gammas: Vec<f64>,
    /// Parameter at which resolvent gaps are measured.
    pub probe_gamma: f64,
    /// Ball radius for the gap measurement.
    pub delta: f64,
    /// Truncation radius for graph-distance estimates.
    pub rho: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<LinearMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom: Option<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<OperatorExpr>,
    /// Declared bound on the range of the inner operator composed with the
    /// map, used by the sandwich bound when the adjoint is not invertible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_bound: Option<f64>,
}

/// One sweep row: the varying parameter, its measurements, and a modulus
/// estimate for the varying operator when one is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub record: MetricRecord,
    pub beta_hat: Option<f64>,
}

/// Full sweep outcome, ordered by row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment: String,
    pub config_hash: u64,
    pub rows: Vec<SweepRow>,
}

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a hash of the canonical JSON encoding of the config.
pub fn config_hash(config: &SweepConfig) -> Result<u64, AnalysisError> {
    let bytes = serde_json::to_vec(config).map_err(|e| AnalysisError::InvalidSweep {
        reason: format!("config serialization failed: {e}"),
    })?;
    Ok(fnv1a64(&bytes))
}

fn sweep_field<'a, T>(
    field: &'a Option<T>,
    kind: SweepKind,
    name: &str,
) -> Result<&'a T, AnalysisError> {
    field.as_ref().ok_or_else(|| AnalysisError::InvalidSweep {
        reason: format!("kind {} requires the {name} field", kind.name()),
    })
}

fn validate_sweep_config(config: &SweepConfig) -> Result<(), AnalysisError> {
    if config.label.trim().is_empty() {
        return Err(AnalysisError::InvalidSweep {
            reason: "label must be non-empty".to_string(),
        });
    }
    if config.gammas.is_empty() {
        return Err(AnalysisError::InvalidSweep {
            reason: "gamma grid must be non-empty".to_string(),
        });
    }
    for g in &config.gammas {
        if !g.is_finite() || *g <= 0.0 {
            return Err(AnalysisError::InvalidSweep {
                reason: format!("gamma grid entry {g} is not a positive real"),
            });
        }
    }
    if config.gammas.len() >= 2 {
        let increasing = config.gammas[1] > config.gammas[0];
        for w in config.gammas.windows(2) {
            let ok = if increasing { w[1] > w[0] } else { w[1] < w[0] };
            if !ok {
                return Err(AnalysisError::InvalidSweep {
                    reason: "gamma grid must be strictly monotone".to_string(),
                });
            }
        }
    }
    if !config.probe_gamma.is_finite() || config.probe_gamma <= 0.0 {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("probe parameter {} is not a positive real", config.probe_gamma),
        });
    }
    if !config.delta.is_finite() || config.delta <= 0.0 {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("gap radius {} is not a positive real", config.delta),
        });
    }
    if !config.rho.is_finite() || config.rho <= 0.0 {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("truncation radius {} is not a positive real", config.rho),
        });
    }
    if config.samples < 2 {
        return Err(AnalysisError::InvalidSweep {
            reason: format!("sample count {} is below 2", config.samples),
        });
    }
    if let Some(rb) = config.range_bound {
        if !rb.is_finite() || rb <= 0.0 {
            return Err(AnalysisError::InvalidSweep {
                reason: format!("range bound {rb} is not a positive real"),
            });
        }
    }
    let atom = sweep_field(&config.atom, config.kind, "atom")?;
    match config.kind {
        SweepKind::Yosida => {}
        SweepKind::SandwichLimit => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            let limit = sweep_field(&config.limit, config.kind, "limit")?;
            if map.codomain_dim() != atom.dim() {
                return Err(AnalysisError::InvalidSweep {
                    reason: "map codomain must match the atom dimension".to_string(),
                });
            }
            if limit.dim() != map.domain_dim() {
                return Err(AnalysisError::InvalidSweep {
                    reason: "limit dimension must match the map domain".to_string(),
                });
            }
            if config.gammas.iter().any(|g| *g >= 1.0) {
                return Err(AnalysisError::InvalidSweep {
                    reason: "sandwich grid entries must stay below 1".to_string(),
                });
            }
        }
        SweepKind::DomainLimit | SweepKind::ZerosLimit => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            let limit = sweep_field(&config.limit, config.kind, "limit")?;
            if map.codomain_dim() != atom.dim() {
                return Err(AnalysisError::InvalidSweep {
                    reason: "map codomain must match the atom dimension".to_string(),
                });
            }
            if limit.dim() != map.domain_dim() {
                return Err(AnalysisError::InvalidSweep {
                    reason: "limit dimension must match the map domain".to_string(),
                });
            }
        }
        SweepKind::Continuity => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            if map.codomain_dim() != atom.dim() {
                return Err(AnalysisError::InvalidSweep {
                    reason: "map codomain must match the atom dimension".to_string(),
                });
            }
        }
    }
    Ok(())
}

fn build_row_ops(
    config: &SweepConfig,
    gamma_n: f64,
) -> Result<(OperatorExpr, OperatorExpr), AnalysisError> {
    let atom = sweep_field(&config.atom, config.kind, "atom")?;
    match config.kind {
        SweepKind::Yosida => {
            let varying = OperatorExpr::yosida(gamma_n, OperatorExpr::leaf(atom.clone()))?;
            Ok((varying, OperatorExpr::leaf(atom.clone())))
        }
        SweepKind::SandwichLimit => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            let limit = sweep_field(&config.limit, config.kind, "limit")?;
            let varying =
                OperatorExpr::cocompose(map.clone(), gamma_n, OperatorExpr::leaf(atom.clone()))?;
            Ok((varying, limit.clone()))
        }
        SweepKind::DomainLimit | SweepKind::ZerosLimit => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            let limit = sweep_field(&config.limit, config.kind, "limit")?;
            let scaled = OperatorExpr::scale_left(gamma_n, OperatorExpr::leaf(atom.clone()))?;
            let varying = OperatorExpr::compose(map.clone(), config.probe_gamma, scaled)?;
            Ok((varying, limit.clone()))
        }
        SweepKind::Continuity => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            let varying =
                OperatorExpr::compose(map.clone(), gamma_n, OperatorExpr::leaf(atom.clone()))?;
            let limit = OperatorExpr::compose(
                map.clone(),
                config.probe_gamma,
                OperatorExpr::leaf(atom.clone()),
            )?;
            Ok((varying, limit))
        }
    }
}

/// Norm of the inverse adjoint when the map is square and invertible.
fn adjoint_inverse_norm(map: &LinearMap) -> Result<Option<f64>, AnalysisError> {
    let mat = map.matrix();
    if !mat.is_square() {
        return Ok(None);
    }
    let (_, sigma, _) = svd(mat)?;
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin > 1e-10 * smax.max(1e-300) {
        Ok(Some(1.0 / smin))
    } else {
        Ok(None)
    }
}

/// A-priori distance bound between a cocomposition at parameter `gamma_n`
/// and its vanishing-parameter limit, on the truncation ball of radius
/// `rho`. Needs a bound `eta` on the certifying directions, obtained either
/// from an invertible adjoint or from a declared range bound.
fn sandwich_bound(
    gamma_n: f64,
    rho: f64,
    map: &LinearMap,
    limit: &OperatorExpr,
    range_bound: Option<f64>,
) -> Result<f64, AnalysisError> {
    if gamma_n >= 1.0 - 1e-9 {
        return Err(AnalysisError::BoundUnavailable {
            context: "sandwich bound needs a parameter below one",
        });
    }
    let origin = Vector::zeros(limit.dim());
    let q = ResolventQuery::new(1.0, origin)?;
    let j0 = resolvent(limit, &q, &ReparamOptions::default())?;
    let delta_b = 2.0 * rho + j0.norm();
    let m = 2.0 * rho + delta_b;
    let eta = match adjoint_inverse_norm(map)? {
        Some(inv_norm) => inv_norm * m,
        None => match range_bound {
            Some(rb) => rb,
            None => {
                return Err(AnalysisError::BoundUnavailable {
                    context: "sandwich bound",
                })
            }
        },
    };
    let g = gamma_n;
    let one_minus = 1.0 - g;
    let inside = g * g / (4.0 * one_minus * one_minus) * m * m + g / (4.0 * one_minus) * eta * eta;
    Ok(inside.sqrt() + g / (2.0 * one_minus) * m)
}

fn sweep_row(config: &SweepConfig, index: usize, gamma_n: f64) -> Result<SweepRow, AnalysisError> {
    let seed_gap = derive_seed(config.seed, index as u64 * 4);
    let seed_haus = derive_seed(config.seed, index as u64 * 4 + 1);
    let seed_beta = derive_seed(config.seed, index as u64 * 4 + 2);
    let (varying, limit) = build_row_ops(config, gamma_n)?;
    let d = d_gamma_delta(
        &varying,
        &limit,
        config.probe_gamma,
        config.delta,
        config.samples,
        seed_gap,
    )?;
    let haus = hausdorff_estimate(
        &varying,
        &limit,
        config.rho,
        config.probe_gamma,
        config.samples,
        seed_haus,
    )?;
    let upper = match config.kind {
        SweepKind::SandwichLimit => {
            let map = sweep_field(&config.map, config.kind, "map")?;
            sandwich_bound(gamma_n, config.rho, map, &limit, config.range_bound)?
        }
        _ => haus.haus_upper_bound,
    };
    let beta_n = config.samples.clamp(2, 48);
    let beta_sample = minty_sample(
        &varying,
        config.probe_gamma,
        config.delta,
        beta_n,
        seed_beta,
    )?;
    let ip = InnerProduct::standard(varying.dim())?;
    let beta_hat = match modulus_estimate(&beta_sample, &ip, default_pair_epsilon(config.delta)) {
        Ok(report) => Some(report.beta_hat),
        Err(AnalysisError::AllPairsDegenerate) => None,
        Err(e) => return Err(e),
    };
    Ok(SweepRow {
        gamma: gamma_n,
        record: MetricRecord {
            gamma: config.probe_gamma,
            delta: config.delta,
            rho: config.rho,
            d_gamma_delta: d,
            haus_lower: haus.haus_lower,
            haus_upper_bound: upper,
        },
        beta_hat,
    })
}

/// Runs a sweep over its parameter grid. Rows are computed independently on
/// up to `threads` worker threads with per-row seed substreams and merged in
/// row order, so the report does not depend on the thread count.
pub fn gamma_sweep(config: &SweepConfig, threads: usize) -> Result<SweepReport, AnalysisError> {
    validate_sweep_config(config)?;
    let hash = config_hash(config)?;
    let n_rows = config.gammas.len();
    let mut slots: Vec<Option<Result<SweepRow, AnalysisError>>> =
        (0..n_rows).map(|_| None).collect();
    let workers = threads.max(1).min(n_rows);
    if workers <= 1 {
        for (i, g) in config.gammas.iter().enumerate() {
            slots[i] = Some(sweep_row(config, i, *g));
        }
    } else {
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                let cfg = &*config;
                handles.push(scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut i = w;
                    while i < cfg.gammas.len() {
                        out.push((i, sweep_row(cfg, i, cfg.gammas[i])));
                        i += workers;
                    }
                    out
                }));
            }
            let mut merged = Vec::with_capacity(n_rows);
            for h in handles {
                merged.extend(h.join().expect("sweep worker panicked"));
            }
            merged
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    }
    let mut rows = Vec::with_capacity(n_rows);
    for slot in slots {
        rows.push(slot.expect("sweep row computed")?);
    }
    Ok(SweepReport {
        experiment: config.label.clone(),
        config_hash: hash,
        rows,
    })
}

/// Renders a sweep report as CSV with the fixed column order
/// `gamma, delta, rho, d, haus_lower, haus_upper, beta_hat`.
pub fn sweep_to_csv(report: &SweepReport) -> String {
    let mut out = String::from("gamma,delta,rho,d,haus_lower,haus_upper,beta_hat\n");
    for row in &report.rows {
        let r = &row.record;
        let beta = row.beta_hat.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.gamma, r.delta, r.rho, r.d_gamma_delta, r.haus_lower, r.haus_upper_bound, beta
        ));
    }
    out
}
