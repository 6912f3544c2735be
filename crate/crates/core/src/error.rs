use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin quantum number {0}: must be a positive multiple of 1/2")]
    InvalidSpin(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical consistency check failed: {0}")]
    NumericalConsistency(String),

    #[error("rotation axis has zero length")]
    ZeroAxis,

    #[error("rotation axis is not normalized (|axis| = {0})")]
    AxisNotNormalized(f64),

    #[error("Hamiltonian is not Hermitian (max deviation {0:e})")]
    InvalidHamiltonian(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("integrator step size underflow after {halvings} halvings (residual {residual:e})")]
    StepUnderflow { halvings: u32, residual: f64 },

    #[error("density matrix lost positivity at t = {time:e} s (min eigenvalue {eigenvalue:e})")]
    PositivityViolation { time: f64, eigenvalue: f64 },

    #[error("negative rate {0} for decoherence channel")]
    NegativeRate(f64),

    #[error("invalid probe configuration: {0}")]
    InvalidProbe(String),

    #[error("time grids of ensemble members differ")]
    GridMismatch,

    #[error("infinite shot noise: photon flux times bin time must be positive")]
    InfiniteNoise,

    #[error("grid undersamples the Larmor period ({0:.2} samples per period, need at least 8)")]
    Undersampled(f64),

    #[error("Larmor frequency must be positive for quadrature demodulation")]
    UnknownLarmor,

    #[error("analysis failed: {0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, Error>;
