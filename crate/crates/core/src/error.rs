use thiserror::Error;

/// Errors raised by grid construction, field calculus, solvers and pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("under-resolved field: relative spectral tail {tail:.3e} exceeds {threshold:.3e}")]
    Resolution { tail: f64, threshold: f64 },

    #[error("radius {radius} outside grid range [{min}, {max}]")]
    OutOfRange { radius: f64, min: f64, max: f64 },

    #[error("degenerate decay fit: {0}")]
    DegenerateFit(String),

    #[error("poor asymptotic fit: {0}")]
    FitQuality(String),

    #[error("non-positive conformal factor (min {min:.3e})")]
    NonPositiveFactor { min: f64 },

    #[error("tail integral diverges: forcing decays at rate {rate:.3} <= {required:.3}")]
    DivergentTail { rate: f64, required: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("mass extrapolation did not converge: last increment {increment:.3e}")]
    MassNonConvergence { increment: f64 },

    #[error("could not certify strict dominant energy condition: {reason} (worst node r={radius:.4}, margin {margin:.3e})")]
    FailureToCertify {
        reason: String,
        radius: f64,
        margin: f64,
    },

    #[error("horizon radius {horizon:.6} lies inside the domain (sinh R0 = {inner:.6})")]
    HorizonInsideDomain { horizon: f64, inner: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable reason code used in reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Resolution { .. } => "resolution",
            Error::OutOfRange { .. } => "out-of-range",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::FitQuality(_) => "fit-quality",
            Error::NonPositiveFactor { .. } => "nonpositive-u",
            Error::DivergentTail { .. } => "divergent-tail",
            Error::Singular(_) => "singular-system",
            Error::NonConvergence { .. } => "non-convergence",
            Error::MassNonConvergence { .. } => "mass-non-convergence",
            Error::FailureToCertify { .. } => "failure-to-certify",
            Error::HorizonInsideDomain { .. } => "horizon-inside-domain",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
