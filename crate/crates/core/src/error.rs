use thiserror::Error;

/// Errors raised by the solvers and field operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("expected {expected} samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    /// The amplitude or density fell below the node floor where a logarithm
    /// or a division by the field is required.
    #[error("node encountered at grid index {index} (value {value:e} below floor {floor:e})")]
    NodeEncountered { index: usize, value: f64, floor: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step {step} produced a non-finite state")]
    StepDiverged { step: usize },

    #[error("Wigner transform left an imaginary residue of {residue:e} (relative)")]
    TransformInconsistent { residue: f64 },

    #[error("potential is not at most quadratic; Moyal evolution is only supported for zero, linear and harmonic potentials")]
    UnsupportedPotential,

    #[error("matrix dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("density became negative at grid index {index} ({value:e})")]
    NegativeDensity { index: usize, value: f64 },

    /// Thermal dispersion law has no positive root when kappa^2 lambda_T^2 >= 2.
    #[error("ill-posed dispersion law: kappa^2 lambda_T^2 = {product} >= 2")]
    IllPosed { product: f64 },

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
