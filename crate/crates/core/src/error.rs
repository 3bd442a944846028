use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("eigenvector matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("bi-orthogonality residual {residual:.3e} exceeds {tolerance:.1e}")]
    BiOrthogonality { residual: f64, tolerance: f64 },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error(
        "quadrature node doubling disagrees: {coarse:.12e} vs {fine:.12e} \
         (relative difference {difference:.3e} > tolerance {tolerance:.1e})"
    )]
    QuadratureDisagreement {
        coarse: f64,
        fine: f64,
        difference: f64,
        tolerance: f64,
    },

    #[error("eigenvalue {eigenvalue} lies outside the range covered by the quadrature cutoffs")]
    QuadratureRange { eigenvalue: String },

    #[error("non-finite sample norm at sample {sample}")]
    NonFinite { sample: usize },

    #[error("domination violated at grid point {index} (xi = {xi:?}): envelope {envelope:.6e} > bound {bound:.6e}")]
    DominationViolated {
        index: usize,
        xi: Vec<f64>,
        envelope: f64,
        bound: f64,
    },

    #[error("ideal property violated: left {left:.6e} > right {right:.6e} (allowed {allowed:.6e})")]
    IdealViolated { left: f64, right: f64, allowed: f64 },

    #[error("scheme not applicable: {0}")]
    Scheme(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("theorem/parameter mismatch: {0}")]
    TheoremMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("all paths are degenerate; no exponent can be fitted")]
    Degenerate,

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("trajectory format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
