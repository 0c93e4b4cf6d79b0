use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("phase {theta} outside [0, 2π]")]
    ThetaOutOfRange { theta: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate monodromy spectrum: eigenphase gap {gap:.3e} below tolerance")]
    DegenerateSpectrum { gap: f64 },

    #[error("quasienergy crossing at λ = {lambda} (gap {gap:.3e})")]
    Crossing { lambda: f64, gap: f64 },

    #[error("continuation ambiguity at ℓ = {coordinate}: overlaps {best:.6} and {second:.6}")]
    NearDegeneracy {
        coordinate: f64,
        best: f64,
        second: f64,
    },

    #[error("sections belong to different branches: dominant Fourier weight {weight:.6}")]
    MismatchedBranch { weight: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid cover: {0}")]
    InvalidCover(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("cocycle violation on charts {charts:?}: magnitude {magnitude:.3e}")]
    CocycleViolation { charts: Vec<usize>, magnitude: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
