//! Operator expressions and their resolvent calculus.
//!
//! An `OperatorExpr` is a tree of transformations applied to atomic monotone
//! operators: inversion, scaling, translation, Yosida regularization,
//! compositions through linear maps, mixtures, averages, splitting and chain
//! constructions, pseudo-inverse weighted compositions, lifted compositions
//! through a norm-contractive map, and direct sums. Every expression knows
//! which resolvent parameters it can evaluate directly; other parameters are
//! reached through a reparameterization fixed point anchored at the native
//! parameter of the whole expression.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{
    pseudo_inverse, sqrt_psd, DenseMatrix, InnerProduct, LinalgError, LinearMap, Vector, DIM_CAP,
};
use crate::operators::{
    atom_resolvent, inclusion_residual, Atom, OperatorError, ResolventQuery,
};
use crate::rng::Rng;

/// Smallest composition parameter accepted by constructors and queries.
pub const GAMMA_MIN: f64 = 1e-8;
/// Largest composition parameter accepted by constructors and queries.
pub const GAMMA_MAX: f64 = 1e8;

/// Errors raised while building or evaluating operator expressions.
#[derive(Debug, Clone, PartialEq)]
pub enum CalculusError {
    /// An atom-level operation failed underneath.
    Operator(OperatorError),
    /// A dense kernel failed underneath.
    Linalg(LinalgError),
    /// An argument had the wrong dimension.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scalar parameter was out of range.
    InvalidParameter { context: &'static str, value: f64 },
    /// A composition parameter fell outside the accepted range.
    InvalidGamma { value: f64 },
    /// Mixture or average weights were not a positive convex combination.
    WeightsInvalid { reason: String },
    /// A combination node needs more elements.
    TooFewElements {
        context: &'static str,
        minimum: usize,
        got: usize,
    },
    /// A construction requires a coisometric map.
    NotCoisometric { context: &'static str },
    /// A resolvent query used a parameter the node cannot evaluate directly.
    NativeParameterMismatch {
        context: &'static str,
        requested: f64,
    },
    /// The expression has no native parameter to anchor reparameterization.
    ReparamUnavailable { context: &'static str },
    /// The reparameterization fixed point exhausted its iteration budget.
    ReparamDivergence { detail: String },
}

impl std::fmt::Display for CalculusError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalculusError::Operator(e) => write!(f, "operator failure: {e}"),
            CalculusError::Linalg(e) => write!(f, "linear algebra failure: {e}"),
            CalculusError::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            CalculusError::InvalidParameter { context, value } => {
                write!(f, "invalid parameter for {context}: {value}")
            }
            CalculusError::InvalidGamma { value } => write!(
                f,
                "composition parameter {value} outside [{GAMMA_MIN:e}, {GAMMA_MAX:e}]"
            ),
            CalculusError::WeightsInvalid { reason } => write!(f, "invalid weights: {reason}"),
            CalculusError::TooFewElements {
                context,
                minimum,
                got,
            } => write!(f, "{context} needs at least {minimum} elements, got {got}"),
            CalculusError::NotCoisometric { context } => {
                write!(f, "{context} requires a coisometric map")
            }
            CalculusError::NativeParameterMismatch { context, requested } => write!(
                f,
                "{context} node cannot evaluate its resolvent at parameter {requested} directly; use the reparameterized evaluation"
            ),
            CalculusError::ReparamUnavailable { context } => {
                write!(f, "reparameterization unavailable: {context}")
            }
            CalculusError::ReparamDivergence { detail } => {
                write!(f, "reparameterization did not converge: {detail}")
            }
        }
    }
}

impl std::error::Error for CalculusError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CalculusError::Operator(e) => Some(e),
            CalculusError::Linalg(e) => Some(e),
            _ => None,
        }
    }
}

impl From<OperatorError> for CalculusError {
    fn from(e: OperatorError) -> Self {
        CalculusError::Operator(e)
    }
}

impl From<LinalgError> for CalculusError {
    fn from(e: LinalgError) -> Self {
        CalculusError::Linalg(e)
    }
}

/// Tolerances for the reparameterization fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamOptions {
    /// Absolute stopping tolerance on successive iterates.
    pub tol: f64,
    /// Iteration cap for each fixed-point loop.
    pub max_iter: usize,
}

impl Default for ReparamOptions {
    fn default() -> Self {
        ReparamOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Which resolvent parameters an expression evaluates directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NativeParam {
    /// Every positive parameter works.
    AnyGamma,
    /// Exactly one parameter works.
    Exact(f64),
    /// No parameter works directly.
    ReparamOnly,
}

impl std::fmt::Display for NativeParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NativeParam::AnyGamma => write!(f, "any"),
            NativeParam::Exact(g) => write!(f, "gamma={g}"),
            NativeParam::ReparamOnly => write!(f, "reparam-only"),
        }
    }
}

/// Relative closeness test for composition parameters.
pub fn gamma_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn supports(native: NativeParam, gamma: f64) -> bool {
    match native {
        NativeParam::AnyGamma => true,
        NativeParam::Exact(g) => gamma_close(g, gamma),
        NativeParam::ReparamOnly => false,
    }
}

/// Weighted composition variants: the direct form or its complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightedMode {
    Plain,
    Co,
}

impl std::fmt::Display for WeightedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightedMode::Plain => write!(f, "plain"),
            WeightedMode::Co => write!(f, "co"),
        }
    }
}

/// One summand of a mixture: a weight, a map into the summand space, and the
/// operator living there.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTerm {
    pub weight: f64,
    pub map: LinearMap,
    pub inner: OperatorExpr,
}

/// One summand of a resolvent average.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageTerm {
    pub weight: f64,
    pub inner: OperatorExpr,
}

/// Expression tree over atomic monotone operators.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorExpr {
    /// Atomic operator.
    Leaf { atom: Atom },
    /// Graph inverse.
    Inverse { inner: Box<OperatorExpr> },
    /// `rho * A` with `rho > 0`.
    ScaleLeft { rho: f64, inner: Box<OperatorExpr> },
    /// `A(rho * .)` with `rho > 0`.
    ScaleRight { rho: f64, inner: Box<OperatorExpr> },
    /// `A - z`.
    TranslateOut { z: Vector, inner: Box<OperatorExpr> },
    /// `A(. - w)`.
    TranslateIn { w: Vector, inner: Box<OperatorExpr> },
    /// `A + rho * Id` with `rho >= 0`.
    AddScaledId { rho: f64, inner: Box<OperatorExpr> },
    /// Yosida regularization `(A^{-1} + lambda Id)^{-1}` with `lambda > 0`.
    Yosida { lambda: f64, inner: Box<OperatorExpr> },
    /// Resolvent composition of `inner` through `map` at parameter `gamma`.
    Compose {
        map: LinearMap,
        gamma: f64,
        inner: Box<OperatorExpr>,
    },
    /// Resolvent cocomposition of `inner` through `map` at parameter `gamma`.
    Cocompose {
        map: LinearMap,
        gamma: f64,
        inner: Box<OperatorExpr>,
    },
    /// Convex mixture of compositions over a common domain.
    Mixture { gamma: f64, terms: Vec<MixtureTerm> },
    /// Convex comixture of cocompositions over a common domain.
    Comixture { gamma: f64, terms: Vec<MixtureTerm> },
    /// Resolvent average over a common space.
    Average { gamma: f64, terms: Vec<AverageTerm> },
    /// Splitting operator whose resolvent alternates two inner resolvents.
    DouglasRachford {
        first: Box<OperatorExpr>,
        second: Box<OperatorExpr>,
    },
    /// Cyclic chain construction over `p` links on a common space; the
    /// expression lives on the product of `p - 1` copies of that space.
    Chain {
        gamma: f64,
        links: Vec<OperatorExpr>,
    },
    /// Composition through `map` evaluated with its pseudo-inverse, together
    /// with the inner product induced by the map.
    WeightedCompose {
        map: LinearMap,
        gamma: f64,
        inner: Box<OperatorExpr>,
        mode: WeightedMode,
        pinv: DenseMatrix,
        metric: InnerProduct,
    },
    /// Cocomposition through the coisometric lift `[map | (Id - map map*)^{1/2}]`
    /// of a map with norm below one.
    PsiLift {
        map: LinearMap,
        gamma: f64,
        inner: Box<OperatorExpr>,
        lifted: LinearMap,
    },
    /// Blockwise direct sum.
    DirectSum { blocks: Vec<OperatorExpr> },
}

fn check_gamma(gamma: f64) -> Result<f64, CalculusError> {
    if !gamma.is_finite() || !(GAMMA_MIN..=GAMMA_MAX).contains(&gamma) {
        return Err(CalculusError::InvalidGamma { value: gamma });
    }
    Ok(gamma)
}

fn check_weights(context: &'static str, weights: &[f64]) -> Result<(), CalculusError> {
    let mut sum = 0.0;
    for w in weights {
        if !w.is_finite() || *w <= 0.0 {
            return Err(CalculusError::WeightsInvalid {
                reason: format!("{context} weight {w} is not strictly positive"),
            });
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(CalculusError::WeightsInvalid {
            reason: format!("{context} weights sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

fn check_total_dim(context: &'static str, dim: usize) -> Result<(), CalculusError> {
    if dim > DIM_CAP {
        return Err(CalculusError::Linalg(LinalgError::DimensionCap { dim }));
    }
    if dim == 0 {
        return Err(CalculusError::Linalg(LinalgError::EmptyDimension {
            context,
        }));
    }
    Ok(())
}

impl OperatorExpr {
    pub fn leaf(atom: Atom) -> OperatorExpr {
        OperatorExpr::Leaf { atom }
    }

    pub fn inverse(inner: OperatorExpr) -> OperatorExpr {
        OperatorExpr::Inverse {
            inner: Box::new(inner),
        }
    }

    pub fn scale_left(rho: f64, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(CalculusError::InvalidParameter {
                context: "left scaling factor",
                value: rho,
            });
        }
        Ok(OperatorExpr::ScaleLeft {
            rho,
            inner: Box::new(inner),
        })
    }

    pub fn scale_right(rho: f64, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(CalculusError::InvalidParameter {
                context: "right scaling factor",
                value: rho,
            });
        }
        Ok(OperatorExpr::ScaleRight {
            rho,
            inner: Box::new(inner),
        })
    }

    pub fn translate_out(z: Vector, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if z.dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "output translation",
                expected: inner.dim(),
                got: z.dim(),
            });
        }
        Ok(OperatorExpr::TranslateOut {
            z,
            inner: Box::new(inner),
        })
    }

    pub fn translate_in(w: Vector, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if w.dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "input translation",
                expected: inner.dim(),
                got: w.dim(),
            });
        }
        Ok(OperatorExpr::TranslateIn {
            w,
            inner: Box::new(inner),
        })
    }

    pub fn add_scaled_id(rho: f64, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(CalculusError::InvalidParameter {
                context: "identity shift factor",
                value: rho,
            });
        }
        Ok(OperatorExpr::AddScaledId {
            rho,
            inner: Box::new(inner),
        })
    }

    pub fn yosida(lambda: f64, inner: OperatorExpr) -> Result<OperatorExpr, CalculusError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(CalculusError::InvalidParameter {
                context: "regularization weight",
                value: lambda,
            });
        }
        Ok(OperatorExpr::Yosida {
            lambda,
            inner: Box::new(inner),
        })
    }

    pub fn compose(
        map: LinearMap,
        gamma: f64,
        inner: OperatorExpr,
    ) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if map.codomain_dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "composition map codomain",
                expected: inner.dim(),
                got: map.codomain_dim(),
            });
        }
        Ok(OperatorExpr::Compose {
            map,
            gamma,
            inner: Box::new(inner),
        })
    }

    pub fn cocompose(
        map: LinearMap,
        gamma: f64,
        inner: OperatorExpr,
    ) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if map.codomain_dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "cocomposition map codomain",
                expected: inner.dim(),
                got: map.codomain_dim(),
            });
        }
        Ok(OperatorExpr::Cocompose {
            map,
            gamma,
            inner: Box::new(inner),
        })
    }

    fn combination_terms(
        context: &'static str,
        gamma: f64,
        terms: Vec<MixtureTerm>,
    ) -> Result<(f64, Vec<MixtureTerm>), CalculusError> {
        check_gamma(gamma)?;
        if terms.is_empty() {
            return Err(CalculusError::TooFewElements {
                context,
                minimum: 1,
                got: 0,
            });
        }
        let weights: Vec<f64> = terms.iter().map(|t| t.weight).collect();
        check_weights(context, &weights)?;
        let domain = terms[0].map.domain_dim();
        for t in &terms {
            if t.map.domain_dim() != domain {
                return Err(CalculusError::DimensionMismatch {
                    context: "mixture term domain",
                    expected: domain,
                    got: t.map.domain_dim(),
                });
            }
            if t.map.codomain_dim() != t.inner.dim() {
                return Err(CalculusError::DimensionMismatch {
                    context: "mixture term codomain",
                    expected: t.inner.dim(),
                    got: t.map.codomain_dim(),
                });
            }
        }
        Ok((gamma, terms))
    }

    pub fn mixture(gamma: f64, terms: Vec<MixtureTerm>) -> Result<OperatorExpr, CalculusError> {
        let (gamma, terms) = Self::combination_terms("mixture", gamma, terms)?;
        Ok(OperatorExpr::Mixture { gamma, terms })
    }

    pub fn comixture(gamma: f64, terms: Vec<MixtureTerm>) -> Result<OperatorExpr, CalculusError> {
        let (gamma, terms) = Self::combination_terms("comixture", gamma, terms)?;
        Ok(OperatorExpr::Comixture { gamma, terms })
    }

    pub fn average(gamma: f64, terms: Vec<AverageTerm>) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if terms.is_empty() {
            return Err(CalculusError::TooFewElements {
                context: "average",
                minimum: 1,
                got: 0,
            });
        }
        let weights: Vec<f64> = terms.iter().map(|t| t.weight).collect();
        check_weights("average", &weights)?;
        let dim = terms[0].inner.dim();
        for t in &terms {
            if t.inner.dim() != dim {
                return Err(CalculusError::DimensionMismatch {
                    context: "average term",
                    expected: dim,
                    got: t.inner.dim(),
                });
            }
        }
        Ok(OperatorExpr::Average { gamma, terms })
    }

    pub fn douglas_rachford(
        first: OperatorExpr,
        second: OperatorExpr,
    ) -> Result<OperatorExpr, CalculusError> {
        if first.dim() != second.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "splitting pair",
                expected: first.dim(),
                got: second.dim(),
            });
        }
        Ok(OperatorExpr::DouglasRachford {
            first: Box::new(first),
            second: Box::new(second),
        })
    }

    pub fn chain(gamma: f64, links: Vec<OperatorExpr>) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if links.len() < 2 {
            return Err(CalculusError::TooFewElements {
                context: "chain",
                minimum: 2,
                got: links.len(),
            });
        }
        let h = links[0].dim();
        for l in &links {
            if l.dim() != h {
                return Err(CalculusError::DimensionMismatch {
                    context: "chain link",
                    expected: h,
                    got: l.dim(),
                });
            }
        }
        check_total_dim("chain", (links.len() - 1) * h)?;
        Ok(OperatorExpr::Chain { gamma, links })
    }

    pub fn weighted_compose(
        map: LinearMap,
        gamma: f64,
        inner: OperatorExpr,
        mode: WeightedMode,
    ) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if map.codomain_dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "weighted composition map codomain",
                expected: inner.dim(),
                got: map.codomain_dim(),
            });
        }
        let pinv = pseudo_inverse(map.matrix())?;
        let metric = InnerProduct::weighted(map.clone())?;
        Ok(OperatorExpr::WeightedCompose {
            map,
            gamma,
            inner: Box::new(inner),
            mode,
            pinv,
            metric,
        })
    }

    pub fn psi_lift(
        map: LinearMap,
        gamma: f64,
        inner: OperatorExpr,
    ) -> Result<OperatorExpr, CalculusError> {
        check_gamma(gamma)?;
        if map.codomain_dim() != inner.dim() {
            return Err(CalculusError::DimensionMismatch {
                context: "lift map codomain",
                expected: inner.dim(),
                got: map.codomain_dim(),
            });
        }
        if map.norm() >= 1.0 - 1e-9 {
            return Err(CalculusError::InvalidParameter {
                context: "lift map norm (must be below one)",
                value: map.norm(),
            });
        }
        let h = map.domain_dim();
        let g = map.codomain_dim();
        check_total_dim("lifted composition", h + g)?;
        let llt = map.matrix().matmul(&map.matrix().transpose())?;
        let psi = DenseMatrix::identity(g).sub(&llt)?;
        let root = sqrt_psd(&psi)?;
        let mut lifted = DenseMatrix::zeros(g, h + g);
        for r in 0..g {
            for c in 0..h {
                lifted.set(r, c, map.matrix().get(r, c));
            }
            for c in 0..g {
                lifted.set(r, h + c, root.get(r, c));
            }
        }
        let lifted = LinearMap::new(lifted)?;
        if !lifted.is_coisometry() {
            return Err(CalculusError::NotCoisometric {
                context: "lifted composition map",
            });
        }
        Ok(OperatorExpr::PsiLift {
            map,
            gamma,
            inner: Box::new(inner),
            lifted,
        })
    }

    pub fn direct_sum(blocks: Vec<OperatorExpr>) -> Result<OperatorExpr, CalculusError> {
        if blocks.is_empty() {
            return Err(CalculusError::TooFewElements {
                context: "direct sum",
                minimum: 1,
                got: 0,
            });
        }
        let total: usize = blocks.iter().map(|b| b.dim()).sum();
        check_total_dim("direct sum", total)?;
        Ok(OperatorExpr::DirectSum { blocks })
    }

    /// Dimension of the space the expression acts on.
    pub fn dim(&self) -> usize {
        match self {
            OperatorExpr::Leaf { atom } => atom.dim(),
            OperatorExpr::Inverse { inner }
            | OperatorExpr::ScaleLeft { inner, .. }
            | OperatorExpr::ScaleRight { inner, .. }
            | OperatorExpr::TranslateOut { inner, .. }
            | OperatorExpr::TranslateIn { inner, .. }
            | OperatorExpr::AddScaledId { inner, .. }
            | OperatorExpr::Yosida { inner, .. } => inner.dim(),
            OperatorExpr::Compose { map, .. } | OperatorExpr::Cocompose { map, .. } => {
                map.domain_dim()
            }
            OperatorExpr::Mixture { terms, .. } | OperatorExpr::Comixture { terms, .. } => {
                terms[0].map.domain_dim()
            }
            OperatorExpr::Average { terms, .. } => terms[0].inner.dim(),
            OperatorExpr::DouglasRachford { first, .. } => first.dim(),
            OperatorExpr::Chain { links, .. } => (links.len() - 1) * links[0].dim(),
            OperatorExpr::WeightedCompose { map, .. } => map.domain_dim(),
            OperatorExpr::PsiLift { lifted, .. } => lifted.domain_dim(),
            OperatorExpr::DirectSum { blocks } => blocks.iter().map(|b| b.dim()).sum(),
        }
    }
}

/// Which resolvent parameters `expr` can evaluate without reparameterization.
pub fn native_param(expr: &OperatorExpr) -> NativeParam {
    use NativeParam::*;
    match expr {
        OperatorExpr::Leaf { .. } => AnyGamma,
        OperatorExpr::Inverse { inner } => match native_param(inner) {
            AnyGamma => AnyGamma,
            Exact(g) => Exact(1.0 / g),
            ReparamOnly => ReparamOnly,
        },
        OperatorExpr::ScaleLeft { rho, inner } | OperatorExpr::ScaleRight { rho, inner } => {
            match native_param(inner) {
                AnyGamma => AnyGamma,
                Exact(g) => Exact(g / rho),
                ReparamOnly => ReparamOnly,
            }
        }
        OperatorExpr::TranslateOut { inner, .. } | OperatorExpr::TranslateIn { inner, .. } => {
            native_param(inner)
        }
        OperatorExpr::AddScaledId { rho, inner } => match native_param(inner) {
            AnyGamma => AnyGamma,
            Exact(g) => {
                let denom = 1.0 - g * rho;
                if *rho == 0.0 {
                    Exact(g)
                } else if denom > 1e-12 {
                    Exact(g / denom)
                } else {
                    ReparamOnly
                }
            }
            ReparamOnly => ReparamOnly,
        },
        OperatorExpr::Yosida { lambda, inner } => match native_param(inner) {
            AnyGamma => AnyGamma,
            Exact(g) => {
                let diff = g - lambda;
                if diff > 1e-12 * g.abs() {
                    Exact(diff)
                } else {
                    ReparamOnly
                }
            }
            ReparamOnly => ReparamOnly,
        },
        OperatorExpr::Compose { map, gamma, inner }
        | OperatorExpr::Cocompose { map, gamma, inner } => {
            if map.is_coisometry() {
                native_param(inner)
            } else if supports(native_param(inner), *gamma) {
                Exact(*gamma)
            } else {
                ReparamOnly
            }
        }
        OperatorExpr::Mixture { gamma, terms } | OperatorExpr::Comixture { gamma, terms } => {
            if terms
                .iter()
                .all(|t| supports(native_param(&t.inner), *gamma))
            {
                Exact(*gamma)
            } else {
                ReparamOnly
            }
        }
        OperatorExpr::Average { gamma, terms } => {
            if terms
                .iter()
                .all(|t| supports(native_param(&t.inner), *gamma))
            {
                Exact(*gamma)
            } else {
                ReparamOnly
            }
        }
        OperatorExpr::DouglasRachford { first, second } => {
            if supports(native_param(first), 1.0) && supports(native_param(second), 1.0) {
                Exact(1.0)
            } else {
                ReparamOnly
            }
        }
        OperatorExpr::Chain { gamma, links } => {
            if links.iter().all(|l| supports(native_param(l), 1.0)) {
                Exact(*gamma)
            } else {
                ReparamOnly
            }
        }
        OperatorExpr::WeightedCompose { inner, .. } => native_param(inner),
        OperatorExpr::PsiLift { inner, .. } => native_param(inner),
        OperatorExpr::DirectSum { blocks } => {
            let mut acc = AnyGamma;
            for b in blocks {
                match (acc, native_param(b)) {
                    (_, AnyGamma) => {}
                    (AnyGamma, e) => acc = e,
                    (Exact(g), Exact(h)) => {
                        if !gamma_close(g, h) {
                            return ReparamOnly;
                        }
                    }
                    (_, ReparamOnly) | (ReparamOnly, _) => return ReparamOnly,
                }
            }
            acc
        }
    }
}

fn split_blocks(x: &Vector, block: usize) -> Vec<Vector> {
    let mut out = Vec::with_capacity(x.dim() / block);
    let mut rest = x.clone();
    while rest.dim() > block {
        let (head, tail) = rest.split_at(block);
        out.push(head);
        rest = tail;
    }
    out.push(rest);
    out
}

fn resolve_rec(expr: &OperatorExpr, gamma: f64, x: &Vector) -> Result<Vector, CalculusError> {
    match expr {
        OperatorExpr::Leaf { atom } => {
            Ok(atom_resolvent(atom, &ResolventQuery::new(gamma, x.clone())?)?)
        }
        OperatorExpr::Inverse { inner } => {
            let sub = resolve_rec(inner, 1.0 / gamma, &x.scale(1.0 / gamma))?;
            Ok(x.axpy(-gamma, &sub))
        }
        OperatorExpr::ScaleLeft { rho, inner } => resolve_rec(inner, gamma * rho, x),
        OperatorExpr::ScaleRight { rho, inner } => {
            let sub = resolve_rec(inner, gamma * rho, &x.scale(*rho))?;
            Ok(sub.scale(1.0 / rho))
        }
        OperatorExpr::TranslateOut { z, inner } => resolve_rec(inner, gamma, &x.axpy(gamma, z)),
        OperatorExpr::TranslateIn { w, inner } => {
            let sub = resolve_rec(inner, gamma, &x.sub(w))?;
            Ok(w.add(&sub))
        }
        OperatorExpr::AddScaledId { rho, inner } => {
            let shrink = 1.0 / (1.0 + gamma * rho);
            resolve_rec(inner, gamma * shrink, &x.scale(shrink))
        }
        OperatorExpr::Yosida { lambda, inner } => {
            let expanded = OperatorExpr::Inverse {
                inner: Box::new(OperatorExpr::AddScaledId {
                    rho: *lambda,
                    inner: Box::new(OperatorExpr::Inverse {
                        inner: inner.clone(),
                    }),
                }),
            };
            resolve_rec(&expanded, gamma, x)
        }
        OperatorExpr::Compose {
            map,
            gamma: g0,
            inner,
        } => {
            let use_gamma = if map.is_coisometry() {
                gamma
            } else if gamma_close(gamma, *g0) {
                *g0
            } else {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "composition",
                    requested: gamma,
                });
            };
            let lx = map.apply(x)?;
            let jb = resolve_rec(inner, use_gamma, &lx)?;
            Ok(map.apply_adjoint(&jb)?)
        }
        OperatorExpr::Cocompose {
            map,
            gamma: g0,
            inner,
        } => {
            let use_gamma = if map.is_coisometry() {
                gamma
            } else if gamma_close(gamma, *g0) {
                *g0
            } else {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "cocomposition",
                    requested: gamma,
                });
            };
            let lx = map.apply(x)?;
            let jb = resolve_rec(inner, use_gamma, &lx)?;
            let diff = lx.sub(&jb);
            Ok(x.sub(&map.apply_adjoint(&diff)?))
        }
        OperatorExpr::Mixture { gamma: g0, terms } => {
            if !gamma_close(gamma, *g0) {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "mixture",
                    requested: gamma,
                });
            }
            let mut acc = Vector::zeros(expr.dim());
            for t in terms {
                let ly = t.map.apply(x)?;
                let j = resolve_rec(&t.inner, *g0, &ly)?;
                let back = t.map.apply_adjoint(&j)?;
                acc = acc.axpy(t.weight, &back);
            }
            Ok(acc)
        }
        OperatorExpr::Comixture { gamma: g0, terms } => {
            if !gamma_close(gamma, *g0) {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "comixture",
                    requested: gamma,
                });
            }
            let mut acc = x.clone();
            for t in terms {
                let ly = t.map.apply(x)?;
                let j = resolve_rec(&t.inner, *g0, &ly)?;
                let back = t.map.apply_adjoint(&ly.sub(&j))?;
                acc = acc.axpy(-t.weight, &back);
            }
            Ok(acc)
        }
        OperatorExpr::Average { gamma: g0, terms } => {
            if !gamma_close(gamma, *g0) {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "average",
                    requested: gamma,
                });
            }
            let mut acc = Vector::zeros(expr.dim());
            for t in terms {
                let j = resolve_rec(&t.inner, *g0, x)?;
                acc = acc.axpy(t.weight, &j);
            }
            Ok(acc)
        }
        OperatorExpr::DouglasRachford { first, second } => {
            if !gamma_close(gamma, 1.0) {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "splitting",
                    requested: gamma,
                });
            }
            let j1 = resolve_rec(first, 1.0, x)?;
            let arg = j1.scale(2.0).sub(x);
            let j2 = resolve_rec(second, 1.0, &arg)?;
            let j2_inv = arg.sub(&j2);
            Ok(j1.sub(&j2_inv))
        }
        OperatorExpr::Chain { gamma: g0, links } => {
            if !gamma_close(gamma, *g0) {
                return Err(CalculusError::NativeParameterMismatch {
                    context: "chain",
                    requested: gamma,
                });
            }
            let p = links.len();
            let h = links[0].dim();
            let z = split_blocks(x, h);
            let mut xs: Vec<Vector> = Vec::with_capacity(p);
            xs.push(resolve_rec(&links[0], 1.0, &z[0])?);
            for k in 1..p - 1 {
                let arg = z[k].add(&xs[k - 1]).sub(&z[k - 1]);
                xs.push(resolve_rec(&links[k], 1.0, &arg)?);
            }
            let last_arg = xs[0].add(&xs[p - 2]).sub(&z[p - 2]);
            xs.push(resolve_rec(&links[p - 1], 1.0, &last_arg)?);
            let g2 = g0 * g0;
            let mut out: Vec<f64> = Vec::with_capacity((p - 1) * h);
            for j in 0..p - 1 {
                let b = z[j].axpy(g2, &xs[j + 1].sub(&xs[j]));
                out.extend_from_slice(b.as_slice());
            }
            Ok(Vector::new(out)?)
        }
        OperatorExpr::WeightedCompose {
            map,
            inner,
            mode,
            pinv,
            ..
        } => {
            let lx = map.apply(x)?;
            let jb = resolve_rec(inner, gamma, &lx)?;
            match mode {
                WeightedMode::Plain => Ok(pinv.matvec(&jb)?),
                WeightedMode::Co => {
                    let diff = lx.sub(&jb);
                    Ok(x.sub(&pinv.matvec(&diff)?))
                }
            }
        }
        OperatorExpr::PsiLift { inner, lifted, .. } => {
            let mx = lifted.apply(x)?;
            let jb = resolve_rec(inner, gamma, &mx)?;
            let diff = mx.sub(&jb);
            Ok(x.sub(&lifted.apply_adjoint(&diff)?))
        }
        OperatorExpr::DirectSum { blocks } => {
            let mut out: Vec<f64> = Vec::with_capacity(expr.dim());
            let mut rest = x.clone();
            for (i, b) in blocks.iter().enumerate() {
                let piece = if i + 1 == blocks.len() {
                    std::mem::replace(&mut rest, Vector::zeros(1))
                } else {
                    let (head, tail) = rest.split_at(b.dim());
                    rest = tail;
                    head
                };
                let j = resolve_rec(b, gamma, &piece)?;
                out.extend_from_slice(j.as_slice());
            }
            Ok(Vector::new(out)?)
        }
    }
}

fn check_query(expr: &OperatorExpr, q: &ResolventQuery) -> Result<(), CalculusError> {
    check_gamma(q.gamma())?;
    if q.point().dim() != expr.dim() {
        return Err(CalculusError::DimensionMismatch {
            context: "resolvent query point",
            expected: expr.dim(),
            got: q.point().dim(),
        });
    }
    Ok(())
}

/// Resolvent of `gamma * expr` at the query point, evaluated directly when
/// the expression supports the parameter; otherwise the query is routed
/// through the reparameterization fixed point.
pub fn resolvent(
    expr: &OperatorExpr,
    q: &ResolventQuery,
    opts: &ReparamOptions,
) -> Result<Vector, CalculusError> {
    match resolvent_native(expr, q) {
        Err(CalculusError::NativeParameterMismatch { .. }) => reparam_resolvent(expr, q, opts),
        other => other,
    }
}

/// Resolvent of `gamma * expr`, restricted to parameters the expression
/// evaluates directly.
pub fn resolvent_native(
    expr: &OperatorExpr,
    q: &ResolventQuery,
) -> Result<Vector, CalculusError> {
    check_query(expr, q)?;
    resolve_rec(expr, q.gamma(), q.point())
}

/// Resolvent of `gamma * expr` through the reparameterization fixed point:
/// the expression is treated as a black box queried only at its native
/// parameter, and the target parameter is reached by a contractive ladder of
/// intermediate parameters, each step changing the parameter by a factor
/// below two.
pub fn reparam_resolvent(
    expr: &OperatorExpr,
    q: &ResolventQuery,
    opts: &ReparamOptions,
) -> Result<Vector, CalculusError> {
    check_query(expr, q)?;
    let mu = q.gamma();
    match native_param(expr) {
        NativeParam::AnyGamma => resolve_rec(expr, mu, q.point()),
        NativeParam::Exact(g0) => {
            if gamma_close(mu, g0) {
                return resolve_rec(expr, g0, q.point());
            }
            ladder(expr, g0, mu, q.point(), opts)
        }
        NativeParam::ReparamOnly => Err(CalculusError::ReparamUnavailable {
            context: "the expression has no native anchor parameter",
        }),
    }
}

fn ladder(
    expr: &OperatorExpr,
    g0: f64,
    mu: f64,
    x: &Vector,
    opts: &ReparamOptions,
) -> Result<Vector, CalculusError> {
    let mut gammas: Vec<f64> = if mu >= 0.6 * g0 {
        vec![g0, mu]
    } else {
        let ratio = g0 / mu;
        let rungs = (ratio.log2().floor() as usize) + 2;
        (0..=rungs)
            .map(|i| g0 * (mu / g0).powf(i as f64 / rungs as f64))
            .collect()
    };
    *gammas.last_mut().expect("ladder has rungs") = mu;
    let mut budget = opts.max_iter.saturating_mul(100);
    let mut caches: Vec<Option<Vector>> = vec![None; gammas.len()];
    eval_rung(expr, &gammas, gammas.len() - 1, x, opts, &mut budget, &mut caches)
}

fn eval_rung(
    expr: &OperatorExpr,
    gammas: &[f64],
    level: usize,
    x: &Vector,
    opts: &ReparamOptions,
    budget: &mut usize,
    caches: &mut [Option<Vector>],
) -> Result<Vector, CalculusError> {
    if level == 0 {
        if *budget == 0 {
            return Err(CalculusError::ReparamDivergence {
                detail: "native evaluation budget exhausted".to_string(),
            });
        }
        *budget -= 1;
        return resolve_rec(expr, gammas[0], x);
    }
    let target = gammas[level];
    let anchor = gammas[level - 1];
    let a = anchor / target;
    let mut p = match &caches[level] {
        Some(v) => v.clone(),
        None => x.clone(),
    };
    for _ in 0..opts.max_iter {
        let arg = x.scale(a).axpy(1.0 - a, &p);
        let next = eval_rung(expr, gammas, level - 1, &arg, opts, budget, caches)?;
        let delta = next.sub(&p).norm();
        p = next;
        if delta <= opts.tol {
            caches[level] = Some(p.clone());
            return Ok(p);
        }
    }
    Err(CalculusError::ReparamDivergence {
        detail: format!(
            "fixed point at parameter {target} did not reach tolerance {} within {} iterations",
            opts.tol, opts.max_iter
        ),
    })
}

/// Sampled consistency report for a composition through a linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCompositionReport {
    /// Number of sampled points.
    pub samples: usize,
    /// Largest residual of the defining inclusion across samples.
    pub max_residual: f64,
    /// Largest residual of the parameter-free collapsed inclusion, present
    /// when the map is coisometric.
    pub collapse_residual: Option<f64>,
}

/// Checks, on random samples, that the composed resolvent solves the
/// inclusion defining the composition of `atom` through `map`: for each
/// sampled `y`, the output `p` and displacement `(y - p) / gamma` must admit
/// the inner resolvent value as a graph certificate. For a coisometric map
/// the collapsed certificate is checked as well.
pub fn parallel_composition_check(
    map: &LinearMap,
    gamma: f64,
    atom: &Atom,
    samples: usize,
    seed: u64,
) -> Result<ParallelCompositionReport, CalculusError> {
    check_gamma(gamma)?;
    if map.codomain_dim() != atom.dim() {
        return Err(CalculusError::DimensionMismatch {
            context: "composition check map codomain",
            expected: atom.dim(),
            got: map.codomain_dim(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut max_residual: f64 = 0.0;
    let mut collapse: Option<f64> = if map.is_coisometry() { Some(0.0) } else { None };
    for _ in 0..samples {
        let y = Vector::new(rng.in_ball(map.domain_dim(), 2.0))?;
        let ly = map.apply(&y)?;
        let v = atom_resolvent(atom, &ResolventQuery::new(gamma, ly.clone())?)?;
        let p = map.apply_adjoint(&v)?;
        let xstar = y.sub(&p).scale(1.0 / gamma);
        let r1 = p.sub(&map.apply_adjoint(&v)?).norm();
        let c = map
            .apply(&xstar.axpy(1.0 / gamma, &p))?
            .axpy(-1.0 / gamma, &v);
        let r2 = inclusion_residual(atom, &v, &c, 0.0)?;
        max_residual = max_residual.max(r1.hypot(r2));
        if let Some(worst) = collapse.as_mut() {
            let r3 = inclusion_residual(atom, &v, &map.apply(&xstar)?, 0.0)?;
            *worst = worst.max(r3);
        }
    }
    Ok(ParallelCompositionReport {
        samples,
        max_residual,
        collapse_residual: collapse,
    })
}

/// For a coisometric map the composition and cocomposition collapse to
/// parameter-independent formulas; this returns the two collapsed
/// expressions, built on the pseudo-inverse form which coincides with the
/// adjoint for coisometries.
pub fn coisometry_collapse(
    map: &LinearMap,
    gamma: f64,
    inner: &OperatorExpr,
) -> Result<(OperatorExpr, OperatorExpr), CalculusError> {
    if !map.is_coisometry() {
        return Err(CalculusError::NotCoisometric {
            context: "collapse",
        });
    }
    let plain = OperatorExpr::weighted_compose(
        map.clone(),
        gamma,
        inner.clone(),
        WeightedMode::Plain,
    )?;
    let co = OperatorExpr::weighted_compose(map.clone(), gamma, inner.clone(), WeightedMode::Co)?;
    Ok((plain, co))
}

fn describe_into(expr: &OperatorExpr, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match expr {
        OperatorExpr::Leaf { atom } => {
            out.push_str(&format!("{pad}leaf {atom}\n"));
        }
        OperatorExpr::Inverse { inner } => {
            out.push_str(&format!("{pad}inverse\n"));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::ScaleLeft { rho, inner } => {
            out.push_str(&format!("{pad}scale_left rho={rho}\n"));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::ScaleRight { rho, inner } => {
            out.push_str(&format!("{pad}scale_right rho={rho}\n"));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::TranslateOut { z, inner } => {
            out.push_str(&format!("{pad}translate_out z={:?}\n", z.as_slice()));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::TranslateIn { w, inner } => {
            out.push_str(&format!("{pad}translate_in w={:?}\n", w.as_slice()));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::AddScaledId { rho, inner } => {
            out.push_str(&format!("{pad}add_scaled_id rho={rho}\n"));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::Yosida { lambda, inner } => {
            out.push_str(&format!("{pad}yosida lambda={lambda}\n"));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::Compose { map, gamma, inner } => {
            out.push_str(&format!(
                "{pad}compose gamma={gamma} map={}x{} norm={:.6} coisometry={}\n",
                map.codomain_dim(),
                map.domain_dim(),
                map.norm(),
                map.is_coisometry()
            ));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::Cocompose { map, gamma, inner } => {
            out.push_str(&format!(
                "{pad}cocompose gamma={gamma} map={}x{} norm={:.6} coisometry={}\n",
                map.codomain_dim(),
                map.domain_dim(),
                map.norm(),
                map.is_coisometry()
            ));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::Mixture { gamma, terms } => {
            out.push_str(&format!("{pad}mixture gamma={gamma} terms={}\n", terms.len()));
            for t in terms {
                out.push_str(&format!(
                    "{pad}  term weight={} map={}x{}\n",
                    t.weight,
                    t.map.codomain_dim(),
                    t.map.domain_dim()
                ));
                describe_into(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::Comixture { gamma, terms } => {
            out.push_str(&format!(
                "{pad}comixture gamma={gamma} terms={}\n",
                terms.len()
            ));
            for t in terms {
                out.push_str(&format!(
                    "{pad}  term weight={} map={}x{}\n",
                    t.weight,
                    t.map.codomain_dim(),
                    t.map.domain_dim()
                ));
                describe_into(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::Average { gamma, terms } => {
            out.push_str(&format!("{pad}average gamma={gamma} terms={}\n", terms.len()));
            for t in terms {
                out.push_str(&format!("{pad}  term weight={}\n", t.weight));
                describe_into(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::DouglasRachford { first, second } => {
            out.push_str(&format!("{pad}douglas_rachford\n"));
            describe_into(first, depth + 1, out);
            describe_into(second, depth + 1, out);
        }
        OperatorExpr::Chain { gamma, links } => {
            out.push_str(&format!(
                "{pad}chain gamma={gamma} links={} link_dim={}\n",
                links.len(),
                links[0].dim()
            ));
            for l in links {
                describe_into(l, depth + 1, out);
            }
        }
        OperatorExpr::WeightedCompose {
            map, gamma, inner, mode, ..
        } => {
            out.push_str(&format!(
                "{pad}weighted_compose gamma={gamma} mode={mode} map={}x{}\n",
                map.codomain_dim(),
                map.domain_dim()
            ));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::PsiLift {
            map,
            gamma,
            inner,
            lifted,
        } => {
            out.push_str(&format!(
                "{pad}psi_lift gamma={gamma} map={}x{} lifted={}x{}\n",
                map.codomain_dim(),
                map.domain_dim(),
                lifted.codomain_dim(),
                lifted.domain_dim()
            ));
            describe_into(inner, depth + 1, out);
        }
        OperatorExpr::DirectSum { blocks } => {
            out.push_str(&format!("{pad}direct_sum blocks={}\n", blocks.len()));
            for b in blocks {
                describe_into(b, depth + 1, out);
            }
        }
    }
}

/// Human-readable summary of an expression tree.
pub fn describe(expr: &OperatorExpr) -> String {
    let mut out = format!(
        "dim {} | native parameter {}\n",
        expr.dim(),
        native_param(expr)
    );
    describe_into(expr, 0, &mut out);
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ExprRepr {
    Leaf {
        atom: Atom,
    },
    Inverse {
        inner: Box<ExprRepr>,
    },
    ScaleLeft {
        rho: f64,
        inner: Box<ExprRepr>,
    },
    ScaleRight {
        rho: f64,
        inner: Box<ExprRepr>,
    },
    TranslateOut {
        z: Vector,
        inner: Box<ExprRepr>,
    },
    TranslateIn {
        w: Vector,
        inner: Box<ExprRepr>,
    },
    AddScaledId {
        rho: f64,
        inner: Box<ExprRepr>,
    },
    Yosida {
        lambda: f64,
        inner: Box<ExprRepr>,
    },
    Compose {
        map: LinearMap,
        gamma: f64,
        inner: Box<ExprRepr>,
    },
    Cocompose {
        map: LinearMap,
        gamma: f64,
        inner: Box<ExprRepr>,
    },
    Mixture {
        gamma: f64,
        terms: Vec<TermRepr>,
    },
    Comixture {
        gamma: f64,
        terms: Vec<TermRepr>,
    },
    Average {
        gamma: f64,
        terms: Vec<AvgTermRepr>,
    },
    DouglasRachford {
        first: Box<ExprRepr>,
        second: Box<ExprRepr>,
    },
    Chain {
        gamma: f64,
        links: Vec<ExprRepr>,
    },
    WeightedCompose {
        map: LinearMap,
        gamma: f64,
        inner: Box<ExprRepr>,
        mode: WeightedMode,
    },
    PsiLift {
        map: LinearMap,
        gamma: f64,
        inner: Box<ExprRepr>,
    },
    DirectSum {
        blocks: Vec<ExprRepr>,
    },
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    weight: f64,
    map: LinearMap,
    inner: ExprRepr,
}

#[derive(Serialize, Deserialize)]
struct AvgTermRepr {
    weight: f64,
    inner: ExprRepr,
}

fn expr_to_repr(expr: &OperatorExpr) -> ExprRepr {
    match expr {
        OperatorExpr::Leaf { atom } => ExprRepr::Leaf { atom: atom.clone() },
        OperatorExpr::Inverse { inner } => ExprRepr::Inverse {
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::ScaleLeft { rho, inner } => ExprRepr::ScaleLeft {
            rho: *rho,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::ScaleRight { rho, inner } => ExprRepr::ScaleRight {
            rho: *rho,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::TranslateOut { z, inner } => ExprRepr::TranslateOut {
            z: z.clone(),
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::TranslateIn { w, inner } => ExprRepr::TranslateIn {
            w: w.clone(),
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::AddScaledId { rho, inner } => ExprRepr::AddScaledId {
            rho: *rho,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::Yosida { lambda, inner } => ExprRepr::Yosida {
            lambda: *lambda,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::Compose { map, gamma, inner } => ExprRepr::Compose {
            map: map.clone(),
            gamma: *gamma,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::Cocompose { map, gamma, inner } => ExprRepr::Cocompose {
            map: map.clone(),
            gamma: *gamma,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::Mixture { gamma, terms } => ExprRepr::Mixture {
            gamma: *gamma,
            terms: terms
                .iter()
                .map(|t| TermRepr {
                    weight: t.weight,
                    map: t.map.clone(),
                    inner: expr_to_repr(&t.inner),
                })
                .collect(),
        },
        OperatorExpr::Comixture { gamma, terms } => ExprRepr::Comixture {
            gamma: *gamma,
            terms: terms
                .iter()
                .map(|t| TermRepr {
                    weight: t.weight,
                    map: t.map.clone(),
                    inner: expr_to_repr(&t.inner),
                })
                .collect(),
        },
        OperatorExpr::Average { gamma, terms } => ExprRepr::Average {
            gamma: *gamma,
            terms: terms
                .iter()
                .map(|t| AvgTermRepr {
                    weight: t.weight,
                    inner: expr_to_repr(&t.inner),
                })
                .collect(),
        },
        OperatorExpr::DouglasRachford { first, second } => ExprRepr::DouglasRachford {
            first: Box::new(expr_to_repr(first)),
            second: Box::new(expr_to_repr(second)),
        },
        OperatorExpr::Chain { gamma, links } => ExprRepr::Chain {
            gamma: *gamma,
            links: links.iter().map(expr_to_repr).collect(),
        },
        OperatorExpr::WeightedCompose {
            map, gamma, inner, mode, ..
        } => ExprRepr::WeightedCompose {
            map: map.clone(),
            gamma: *gamma,
            inner: Box::new(expr_to_repr(inner)),
            mode: *mode,
        },
        OperatorExpr::PsiLift {
            map, gamma, inner, ..
        } => ExprRepr::PsiLift {
            map: map.clone(),
            gamma: *gamma,
            inner: Box::new(expr_to_repr(inner)),
        },
        OperatorExpr::DirectSum { blocks } => ExprRepr::DirectSum {
            blocks: blocks.iter().map(expr_to_repr).collect(),
        },
    }
}

fn expr_from_repr(repr: ExprRepr) -> Result<OperatorExpr, CalculusError> {
    match repr {
        ExprRepr::Leaf { atom } => Ok(OperatorExpr::leaf(atom)),
        ExprRepr::Inverse { inner } => Ok(OperatorExpr::inverse(expr_from_repr(*inner)?)),
        ExprRepr::ScaleLeft { rho, inner } => {
            OperatorExpr::scale_left(rho, expr_from_repr(*inner)?)
        }
        ExprRepr::ScaleRight { rho, inner } => {
            OperatorExpr::scale_right(rho, expr_from_repr(*inner)?)
        }
        ExprRepr::TranslateOut { z, inner } => {
            OperatorExpr::translate_out(z, expr_from_repr(*inner)?)
        }
        ExprRepr::TranslateIn { w, inner } => {
            OperatorExpr::translate_in(w, expr_from_repr(*inner)?)
        }
        ExprRepr::AddScaledId { rho, inner } => {
            OperatorExpr::add_scaled_id(rho, expr_from_repr(*inner)?)
        }
        ExprRepr::Yosida { lambda, inner } => {
            OperatorExpr::yosida(lambda, expr_from_repr(*inner)?)
        }
        ExprRepr::Compose { map, gamma, inner } => {
            OperatorExpr::compose(map, gamma, expr_from_repr(*inner)?)
        }
        ExprRepr::Cocompose { map, gamma, inner } => {
            OperatorExpr::cocompose(map, gamma, expr_from_repr(*inner)?)
        }
        ExprRepr::Mixture { gamma, terms } => {
            let terms = terms
                .into_iter()
                .map(|t| {
                    Ok(MixtureTerm {
                        weight: t.weight,
                        map: t.map,
                        inner: expr_from_repr(t.inner)?,
                    })
                })
                .collect::<Result<Vec<_>, CalculusError>>()?;
            OperatorExpr::mixture(gamma, terms)
        }
        ExprRepr::Comixture { gamma, terms } => {
            let terms = terms
                .into_iter()
                .map(|t| {
                    Ok(MixtureTerm {
                        weight: t.weight,
                        map: t.map,
                        inner: expr_from_repr(t.inner)?,
                    })
                })
                .collect::<Result<Vec<_>, CalculusError>>()?;
            OperatorExpr::comixture(gamma, terms)
        }
        ExprRepr::Average { gamma, terms } => {
            let terms = terms
                .into_iter()
                .map(|t| {
                    Ok(AverageTerm {
                        weight: t.weight,
                        inner: expr_from_repr(t.inner)?,
                    })
                })
                .collect::<Result<Vec<_>, CalculusError>>()?;
            OperatorExpr::average(gamma, terms)
        }
        ExprRepr::DouglasRachford { first, second } => {
            OperatorExpr::douglas_rachford(expr_from_repr(*first)?, expr_from_repr(*second)?)
        }
        ExprRepr::Chain { gamma, links } => {
            let links = links
                .into_iter()
                .map(expr_from_repr)
                .collect::<Result<Vec<_>, CalculusError>>()?;
            OperatorExpr::chain(gamma, links)
        }
        ExprRepr::WeightedCompose {
            map,
            gamma,
            inner,
            mode,
        } => OperatorExpr::weighted_compose(map, gamma, expr_from_repr(*inner)?, mode),
        ExprRepr::PsiLift { map, gamma, inner } => {
            OperatorExpr::psi_lift(map, gamma, expr_from_repr(*inner)?)
        }
        ExprRepr::DirectSum { blocks } => {
            let blocks = blocks
                .into_iter()
                .map(expr_from_repr)
                .collect::<Result<Vec<_>, CalculusError>>()?;
            OperatorExpr::direct_sum(blocks)
        }
    }
}

impl Serialize for OperatorExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        expr_to_repr(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for OperatorExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ExprRepr::deserialize(deserializer)?;
        expr_from_repr(repr).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::ConvexSet;

    fn v(entries: &[f64]) -> Vector {
        Vector::from_slice(entries).unwrap()
    }

    fn lmap(rows: &[Vec<f64>]) -> LinearMap {
        LinearMap::new(DenseMatrix::from_rows(rows).unwrap()).unwrap()
    }

    fn scaled_leaf(dim: usize, alpha: f64) -> OperatorExpr {
        OperatorExpr::leaf(Atom::scaled_identity(dim, alpha).unwrap())
    }

    fn rq(gamma: f64, x: &[f64]) -> ResolventQuery {
        ResolventQuery::new(gamma, v(x)).unwrap()
    }

    fn native(expr: &OperatorExpr, gamma: f64, x: &[f64]) -> Vector {
        resolvent_native(expr, &rq(gamma, x)).unwrap()
    }

    #[test]
    fn compose_identity_matches_leaf() {
        let atom = Atom::subdiff_l1(2, 1.0).unwrap();
        let expr = OperatorExpr::compose(
            LinearMap::identity(2),
            0.7,
            OperatorExpr::leaf(atom.clone()),
        )
        .unwrap();
        assert_eq!(native_param(&expr), NativeParam::AnyGamma);
        for gamma in [0.3, 0.7, 2.5] {
            let got = native(&expr, gamma, &[2.0, -0.4]);
            let want = atom_resolvent(&atom, &rq(gamma, &[2.0, -0.4])).unwrap();
            assert!(got.sub(&want).norm() <= 1e-14);
        }
    }

    #[test]
    fn splitting_node_projects_to_intersection_point() {
        let zero_cone =
            OperatorExpr::leaf(Atom::normal_cone(ConvexSet::singleton(v(&[0.0]))));
        let flat = OperatorExpr::leaf(Atom::zero(1).unwrap());
        let expr = OperatorExpr::douglas_rachford(zero_cone, flat).unwrap();
        assert_eq!(native_param(&expr), NativeParam::Exact(1.0));
        let got = native(&expr, 1.0, &[5.0]);
        assert!(got.norm() <= 1e-14);
    }

    #[test]
    fn average_of_identical_terms_is_plain_resolvent() {
        let atom = Atom::subdiff_l1(1, 1.0).unwrap();
        let expr = OperatorExpr::average(
            0.5,
            vec![
                AverageTerm {
                    weight: 0.3,
                    inner: OperatorExpr::leaf(atom.clone()),
                },
                AverageTerm {
                    weight: 0.7,
                    inner: OperatorExpr::leaf(atom.clone()),
                },
            ],
        )
        .unwrap();
        let got = native(&expr, 0.5, &[2.0]);
        let want = atom_resolvent(&atom, &rq(0.5, &[2.0])).unwrap();
        assert!(got.sub(&want).norm() <= 1e-15);
    }

    #[test]
    fn cocompose_closed_form_example() {
        let inner = OperatorExpr::scale_left(
            2.0,
            OperatorExpr::scale_right(2.0, scaled_leaf(1, 1.0)).unwrap(),
        )
        .unwrap();
        let expr = OperatorExpr::cocompose(lmap(&[vec![0.5]]), 1.0 / 3.0, inner).unwrap();
        let got = native(&expr, 1.0 / 3.0, &[1.0]);
        assert!((got[0] - 6.0 / 7.0).abs() <= 1e-14);
    }

    #[test]
    fn scaling_closed_forms() {
        let expr_l = OperatorExpr::scale_left(2.0, scaled_leaf(1, 3.0)).unwrap();
        let got = native(&expr_l, 0.5, &[4.0]);
        assert!((got[0] - 1.0).abs() <= 1e-14);
        let expr_r = OperatorExpr::scale_right(2.0, scaled_leaf(1, 3.0)).unwrap();
        let got = native(&expr_r, 0.5, &[4.0]);
        assert!((got[0] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn translation_closed_forms() {
        let expr_out =
            OperatorExpr::translate_out(v(&[2.0]), OperatorExpr::leaf(Atom::zero(1).unwrap()))
                .unwrap();
        let got = native(&expr_out, 0.5, &[1.0]);
        assert!((got[0] - 2.0).abs() <= 1e-14);
        let expr_in = OperatorExpr::translate_in(v(&[1.0]), scaled_leaf(1, 1.0)).unwrap();
        let got = native(&expr_in, 1.0, &[3.0]);
        assert!((got[0] - 2.0).abs() <= 1e-14);
    }

    #[test]
    fn inverse_closed_form() {
        let expr = OperatorExpr::inverse(scaled_leaf(1, 2.0));
        let gamma = 0.8;
        let got = native(&expr, gamma, &[3.0]);
        assert!((got[0] - 3.0 / (1.0 + gamma / 2.0)).abs() <= 1e-14);
    }

    #[test]
    fn add_scaled_id_closed_form() {
        let expr = OperatorExpr::add_scaled_id(1.5, scaled_leaf(1, 2.0)).unwrap();
        let gamma = 0.4;
        let got = native(&expr, gamma, &[2.0]);
        assert!((got[0] - 2.0 / (1.0 + gamma * 3.5)).abs() <= 1e-14);
    }

    #[test]
    fn yosida_closed_form() {
        let lambda = 0.5;
        let alpha = 2.0;
        let gamma = 0.7;
        let expr = OperatorExpr::yosida(lambda, scaled_leaf(1, alpha)).unwrap();
        let got = native(&expr, gamma, &[3.0]);
        let want = 3.0 * (1.0 + lambda * alpha) / (1.0 + (gamma + lambda) * alpha);
        assert!((got[0] - want).abs() <= 1e-14);
    }

    #[test]
    fn coisometric_row_collapses_at_all_parameters() {
        let map = lmap(&[vec![0.6, 0.8]]);
        assert!(map.is_coisometry());
        let alpha = 2.0;
        let expr = OperatorExpr::compose(map.clone(), 1.0, scaled_leaf(1, alpha)).unwrap();
        assert_eq!(native_param(&expr), NativeParam::AnyGamma);
        let gamma = 0.25;
        let x = v(&[1.0, -2.0]);
        let got = resolvent_native(&expr, &ResolventQuery::new(gamma, x.clone()).unwrap()).unwrap();
        let lx = map.apply(&x).unwrap();
        let want = map
            .apply_adjoint(&lx.scale(1.0 / (1.0 + gamma * alpha)))
            .unwrap();
        assert!(got.sub(&want).norm() <= 1e-14);
    }

    #[test]
    fn coisometric_scaling_identity() {
        let mu: f64 = 2.0;
        let s = DenseMatrix::from_rows(&[vec![
            mu.sqrt() * 0.6,
            mu.sqrt() * 0.8,
        ]])
        .unwrap();
        let l = LinearMap::new(s.scale(1.0 / mu.sqrt())).unwrap();
        assert!(l.is_coisometry());
        let alpha = 1.3;
        let b = OperatorExpr::scale_left(
            mu.sqrt(),
            OperatorExpr::scale_right(mu.sqrt(), scaled_leaf(1, alpha)).unwrap(),
        )
        .unwrap();
        let expr = OperatorExpr::cocompose(l, 1.0, b).unwrap();
        for gamma in [0.3, 1.0, 2.0] {
            let x = v(&[0.7, -1.1]);
            let got =
                resolvent_native(&expr, &ResolventQuery::new(gamma, x.clone()).unwrap()).unwrap();
            let sx = s.matvec(&x).unwrap();
            let j = sx.scale(1.0 / (1.0 + mu * gamma * alpha));
            let want = x.sub(&s.matvec_t(&sx.sub(&j)).unwrap().scale(1.0 / mu));
            assert!(got.sub(&want).norm() <= 1e-14, "gamma {gamma}");
        }
    }

    #[test]
    fn chain_two_links_recursion() {
        let links = vec![scaled_leaf(1, 1.0), scaled_leaf(1, 3.0)];
        let expr = OperatorExpr::chain(0.5, links).unwrap();
        assert_eq!(expr.dim(), 1);
        let got = native(&expr, 0.5, &[1.2]);
        assert!((got[0] - 1.05).abs() <= 1e-14);
    }

    #[test]
    fn chain_three_links_shape() {
        let links = vec![
            scaled_leaf(2, 1.0),
            scaled_leaf(2, 2.0),
            scaled_leaf(2, 0.5),
        ];
        let expr = OperatorExpr::chain(1.0, links).unwrap();
        assert_eq!(expr.dim(), 4);
        let got = native(&expr, 1.0, &[1.0, -1.0, 0.5, 2.0]);
        assert_eq!(got.dim(), 4);
    }

    #[test]
    fn direct_sum_acts_blockwise() {
        let expr = OperatorExpr::direct_sum(vec![
            scaled_leaf(1, 1.0),
            OperatorExpr::leaf(Atom::zero(2).unwrap()),
        ])
        .unwrap();
        assert_eq!(expr.dim(), 3);
        let got = native(&expr, 1.0, &[2.0, 5.0, -1.0]);
        assert_eq!(got.as_slice(), &[1.0, 5.0, -1.0]);
    }

    #[test]
    fn weighted_compose_wide_map() {
        let map = lmap(&[vec![1.0, 1.0]]);
        let expr = OperatorExpr::weighted_compose(
            map,
            1.0,
            scaled_leaf(1, 1.0),
            WeightedMode::Plain,
        )
        .unwrap();
        assert_eq!(native_param(&expr), NativeParam::AnyGamma);
        let got = native(&expr, 1.0, &[1.0, 3.0]);
        assert!((got[0] - 1.0).abs() <= 1e-14);
        assert!((got[1] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn psi_lift_builds_coisometric_extension() {
        let map = lmap(&[vec![0.5]]);
        let expr = OperatorExpr::psi_lift(map, 1.0, scaled_leaf(1, 2.0)).unwrap();
        assert_eq!(expr.dim(), 2);
        match &expr {
            OperatorExpr::PsiLift { lifted, .. } => {
                assert!(lifted.is_coisometry());
                assert!((lifted.matrix().get(0, 0) - 0.5).abs() <= 1e-12);
                assert!((lifted.matrix().get(0, 1) - 0.75f64.sqrt()).abs() <= 1e-12);
            }
            other => panic!("unexpected shape {other:?}"),
        }
        let gamma = 0.6;
        let x = v(&[1.0, -0.5]);
        let got = resolvent_native(&expr, &ResolventQuery::new(gamma, x.clone()).unwrap()).unwrap();
        match &expr {
            OperatorExpr::PsiLift { lifted, .. } => {
                let mx = lifted.apply(&x).unwrap();
                let j = mx.scale(1.0 / (1.0 + 2.0 * gamma));
                let want = x.sub(&lifted.apply_adjoint(&mx.sub(&j)).unwrap());
                assert!(got.sub(&want).norm() <= 1e-14);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn native_param_classification() {
        let leaf = scaled_leaf(1, 1.0);
        assert_eq!(native_param(&leaf), NativeParam::AnyGamma);
        let rot = lmap(&[vec![0.6, 0.2], vec![0.1, 0.7]]);
        let composed = OperatorExpr::compose(rot, 0.5, scaled_leaf(2, 1.0)).unwrap();
        assert_eq!(native_param(&composed), NativeParam::Exact(0.5));
        let shifted = OperatorExpr::add_scaled_id(4.0, composed.clone()).unwrap();
        assert_eq!(native_param(&shifted), NativeParam::ReparamOnly);
        let mild = OperatorExpr::add_scaled_id(1.0, composed.clone()).unwrap();
        assert_eq!(native_param(&mild), NativeParam::Exact(1.0));
        let smoothed = OperatorExpr::yosida(0.2, composed.clone()).unwrap();
        match native_param(&smoothed) {
            NativeParam::Exact(g) => assert!((g - 0.3).abs() <= 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let too_smooth = OperatorExpr::yosida(0.5, composed).unwrap();
        assert_eq!(native_param(&too_smooth), NativeParam::ReparamOnly);
    }

    #[test]
    fn reparam_matches_closed_form_on_opaque_node() {
        let atom = Atom::subdiff_l1(1, 1.0).unwrap();
        let expr = OperatorExpr::mixture(
            1.0,
            vec![MixtureTerm {
                weight: 1.0,
                map: LinearMap::identity(1),
                inner: OperatorExpr::leaf(atom.clone()),
            }],
        )
        .unwrap();
        assert_eq!(native_param(&expr), NativeParam::Exact(1.0));
        let opts = ReparamOptions::default();
        for mu in [2.0, 0.5, 0.2, 5.0] {
            let got = reparam_resolvent(&expr, &rq(mu, &[2.0]), &opts).unwrap();
            let want = atom_resolvent(&atom, &rq(mu, &[2.0])).unwrap();
            assert!(
                (got[0] - want[0]).abs() <= 1e-8,
                "mu {mu}: got {} want {}",
                got[0],
                want[0]
            );
        }
    }

    #[test]
    fn resolvent_entry_point_reparameterizes() {
        let expr = OperatorExpr::mixture(
            1.0,
            vec![MixtureTerm {
                weight: 1.0,
                map: LinearMap::identity(1),
                inner: scaled_leaf(1, 1.0),
            }],
        )
        .unwrap();
        let opts = ReparamOptions::default();
        let got = resolvent(&expr, &rq(3.0, &[4.0]), &opts).unwrap();
        assert!((got[0] - 1.0).abs() <= 1e-8);
        assert!(matches!(
            resolvent_native(&expr, &rq(3.0, &[4.0])),
            Err(CalculusError::NativeParameterMismatch { .. })
        ));
    }

    #[test]
    fn reparam_reports_divergence_and_unavailability() {
        let expr = OperatorExpr::mixture(
            1.0,
            vec![MixtureTerm {
                weight: 1.0,
                map: LinearMap::identity(1),
                inner: scaled_leaf(1, 1.0),
            }],
        )
        .unwrap();
        let tight = ReparamOptions {
            tol: 1e-14,
            max_iter: 3,
        };
        assert!(matches!(
            reparam_resolvent(&expr, &rq(20.0, &[1.0]), &tight),
            Err(CalculusError::ReparamDivergence { .. })
        ));
        let rot = lmap(&[vec![0.6, 0.2], vec![0.1, 0.7]]);
        let composed = OperatorExpr::compose(rot, 0.5, scaled_leaf(2, 1.0)).unwrap();
        let blocked = OperatorExpr::add_scaled_id(4.0, composed).unwrap();
        assert!(matches!(
            reparam_resolvent(&blocked, &rq(1.0, &[1.0, 1.0]), &ReparamOptions::default()),
            Err(CalculusError::ReparamUnavailable { .. })
        ));
    }

    #[test]
    fn parallel_composition_check_is_tight() {
        let map = lmap(&[vec![0.6, 0.8]]);
        let atom = Atom::subdiff_l1(1, 0.5).unwrap();
        let report = parallel_composition_check(&map, 0.8, &atom, 25, 7).unwrap();
        assert_eq!(report.samples, 25);
        assert!(report.max_residual <= 1e-10, "{}", report.max_residual);
        let collapse = report.collapse_residual.expect("coisometric map");
        assert!(collapse <= 1e-10, "{collapse}");
        let skew = lmap(&[vec![0.6, 0.2], vec![0.1, 0.7]]);
        let atom2 = Atom::scaled_identity(2, 1.0).unwrap();
        let report2 = parallel_composition_check(&skew, 0.8, &atom2, 25, 7).unwrap();
        assert!(report2.max_residual <= 1e-10);
        assert!(report2.collapse_residual.is_none());
    }

    #[test]
    fn collapse_expressions_match_direct_evaluation() {
        let map = lmap(&[vec![0.6, 0.8]]);
        let inner = scaled_leaf(1, 2.0);
        let (plain, co) = coisometry_collapse(&map, 1.0, &inner).unwrap();
        let compose = OperatorExpr::compose(map.clone(), 1.0, inner.clone()).unwrap();
        let cocompose = OperatorExpr::cocompose(map.clone(), 1.0, inner).unwrap();
        for gamma in [0.25, 1.0, 3.0] {
            let x = [0.9, -1.7];
            let a = native(&plain, gamma, &x);
            let b = native(&compose, gamma, &x);
            assert!(a.sub(&b).norm() <= 1e-13, "gamma {gamma}");
            let c = native(&co, gamma, &x);
            let d = native(&cocompose, gamma, &x);
            assert!(c.sub(&d).norm() <= 1e-13, "gamma {gamma}");
        }
        let skew = lmap(&[vec![0.6, 0.2], vec![0.1, 0.7]]);
        assert!(matches!(
            coisometry_collapse(&skew, 1.0, &scaled_leaf(2, 1.0)),
            Err(CalculusError::NotCoisometric { .. })
        ));
    }

    #[test]
    fn construction_validation() {
        assert!(matches!(
            OperatorExpr::scale_left(0.0, scaled_leaf(1, 1.0)),
            Err(CalculusError::InvalidParameter { .. })
        ));
        assert!(matches!(
            OperatorExpr::chain(1.0, vec![scaled_leaf(1, 1.0)]),
            Err(CalculusError::TooFewElements { .. })
        ));
        assert!(matches!(
            OperatorExpr::compose(LinearMap::identity(2), 1e9, scaled_leaf(2, 1.0)),
            Err(CalculusError::InvalidGamma { .. })
        ));
        assert!(matches!(
            OperatorExpr::compose(LinearMap::identity(2), 1.0, scaled_leaf(3, 1.0)),
            Err(CalculusError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            OperatorExpr::mixture(
                1.0,
                vec![MixtureTerm {
                    weight: 0.4,
                    map: LinearMap::identity(1),
                    inner: scaled_leaf(1, 1.0),
                }],
            ),
            Err(CalculusError::WeightsInvalid { .. })
        ));
        let big = lmap(&[vec![2.0]]);
        assert!(matches!(
            OperatorExpr::psi_lift(big, 1.0, scaled_leaf(1, 1.0)),
            Err(CalculusError::InvalidParameter { .. })
        ));
        assert!(matches!(
            OperatorExpr::translate_out(v(&[1.0, 2.0]), scaled_leaf(1, 1.0)),
            Err(CalculusError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expr_json_round_trip() {
        let map = lmap(&[vec![0.6, 0.8]]);
        let exprs = vec![
            OperatorExpr::leaf(Atom::subdiff_l1(2, 1.0).unwrap()),
            OperatorExpr::inverse(scaled_leaf(1, 2.0)),
            OperatorExpr::scale_left(2.0, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::scale_right(0.5, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::translate_out(v(&[1.0]), scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::translate_in(v(&[0.5]), scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::add_scaled_id(0.3, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::yosida(0.2, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::compose(map.clone(), 0.7, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::cocompose(map.clone(), 0.7, scaled_leaf(1, 1.0)).unwrap(),
            OperatorExpr::mixture(
                1.0,
                vec![
                    MixtureTerm {
                        weight: 0.4,
                        map: map.clone(),
                        inner: scaled_leaf(1, 1.0),
                    },
                    MixtureTerm {
                        weight: 0.6,
                        map: LinearMap::identity(2),
                        inner: scaled_leaf(2, 2.0),
                    },
                ],
            )
            .unwrap(),
            OperatorExpr::comixture(
                1.0,
                vec![MixtureTerm {
                    weight: 1.0,
                    map: map.clone(),
                    inner: scaled_leaf(1, 1.0),
                }],
            )
            .unwrap(),
            OperatorExpr::average(
                0.5,
                vec![
                    AverageTerm {
                        weight: 0.5,
                        inner: scaled_leaf(1, 1.0),
                    },
                    AverageTerm {
                        weight: 0.5,
                        inner: OperatorExpr::leaf(Atom::zero(1).unwrap()),
                    },
                ],
            )
            .unwrap(),
            OperatorExpr::douglas_rachford(scaled_leaf(1, 1.0), scaled_leaf(1, 2.0)).unwrap(),
            OperatorExpr::chain(0.5, vec![scaled_leaf(1, 1.0), scaled_leaf(1, 3.0)]).unwrap(),
            OperatorExpr::weighted_compose(
                lmap(&[vec![1.0, 1.0]]),
                1.0,
                scaled_leaf(1, 1.0),
                WeightedMode::Co,
            )
            .unwrap(),
            OperatorExpr::psi_lift(lmap(&[vec![0.5]]), 1.0, scaled_leaf(1, 2.0)).unwrap(),
            OperatorExpr::direct_sum(vec![scaled_leaf(1, 1.0), scaled_leaf(2, 2.0)]).unwrap(),
        ];
        for expr in exprs {
            let text = serde_json::to_string(&expr).unwrap();
            let back: OperatorExpr = serde_json::from_str(&text).unwrap();
            assert_eq!(expr, back, "round trip failed for {text}");
        }
    }

    #[test]
    fn compose_json_shape() {
        let expr = OperatorExpr::compose(lmap(&[vec![0.6, 0.8]]), 1.0, scaled_leaf(1, 1.0)).unwrap();
        let text = serde_json::to_string(&expr).unwrap();
        assert_eq!(
            text,
            r#"{"type":"compose","map":{"rows":1,"cols":2,"data":[0.6,0.8]},"gamma":1.0,"inner":{"type":"leaf","atom":{"type":"scaled_identity","dim":1,"alpha":1.0}}}"#
        );
    }

    #[test]
    fn describe_names_structure() {
        let expr = OperatorExpr::cocompose(
            lmap(&[vec![0.6, 0.8]]),
            0.5,
            OperatorExpr::yosida(0.1, scaled_leaf(1, 1.0)).unwrap(),
        )
        .unwrap();
        let text = describe(&expr);
        assert!(text.contains("cocompose"));
        assert!(text.contains("yosida"));
        assert!(text.contains("scaled_identity"));
        assert!(text.starts_with("dim 2 | native parameter any"));
    }
}
