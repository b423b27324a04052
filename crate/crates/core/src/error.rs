use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not Hermitian (max |A - A†| = {max_dev:.3e}, tolerance {tol:.1e})")]
    NotHermitian { max_dev: f64, tol: f64 },

    #[error("state is not normalized (|⟨v|v⟩ - 1| = {dev:.3e}, tolerance {tol:.1e})")]
    NotNormalized { dev: f64, tol: f64 },

    #[error("basis is not orthonormal: |⟨v{i}|v{j}⟩ - δ| = {dev:.3e}")]
    NotOrthonormal { i: usize, j: usize, dev: f64 },

    #[error("projector family invalid: {reason}")]
    InvalidProjectorFamily { reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("scenario validation error in {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("time {t} outside [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("eigendecomposition failed for {dim}x{dim} Hermitian matrix")]
    EigenFailure { dim: usize },

    #[error("negative branch weight {weight:.3e} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("rate cap exceeded: exit rate {rate:.3e} * dt {dt:.3e} = {product:.3e} > 0.5")]
    RateCapExceeded { rate: f64, dt: f64, product: f64 },

    #[error("grid misaligned: {reason}")]
    GridMisaligned { reason: String },

    #[error(
        "master-equation step unstable at t = {t}: undershoot {undershoot:.3e} >= {limit:.1e}; \
         decrease the integration step"
    )]
    IntegrationUnstable {
        t: f64,
        undershoot: f64,
        limit: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
