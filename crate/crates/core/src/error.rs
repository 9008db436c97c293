use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes: configuration
/// problems exit with 2, everything else with 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("t = {t} lies on switching surface {index} (theta = {theta})")]
    Boundary { t: f64, index: usize, theta: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory left the domain box at t = {t}")]
    LeftDomain { t: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("maximum number of steps exceeded at t = {t}")]
    TooManySteps { t: f64 },

    #[error("no bracket for switching surface {index} in zone {zone}; last valid t = {t}")]
    EventBracket { index: usize, zone: usize, t: f64 },

    #[error("quadrature did not converge on panel [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("newton iteration failed: {0}")]
    Newton(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigenvalues are real (discriminant {discriminant:e}); no complex pair")]
    RealEigenvalues { discriminant: f64 },

    #[error("root not bracketed: {0}")]
    NoBracket(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("finite-difference stencil leaves the domain at {0:?}")]
    StencilDomain(Vec<f64>),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("invariant curve collapsed onto the fixed point (mean radius {radius:e})")]
    RingCollapse { radius: f64 },

    #[error("invariant curve iteration failed: {0}")]
    CurveFailure(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors that originate from user input rather than from analysis.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::UnknownSystem(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::UnknownSystem(_) => "unknown-system",
            Error::Boundary { .. } => "boundary",
            Error::Domain(_) => "domain",
            Error::LeftDomain { .. } => "left-domain",
            Error::StepUnderflow { .. } => "step-underflow",
            Error::TooManySteps { .. } => "too-many-steps",
            Error::EventBracket { .. } => "event-bracket",
            Error::Quadrature { .. } => "quadrature",
            Error::Newton(_) => "newton",
            Error::Singular(_) => "singular",
            Error::RealEigenvalues { .. } => "real-eigenvalues",
            Error::NoBracket(_) => "no-bracket",
            Error::Degenerate(_) => "degenerate",
            Error::StencilDomain(_) => "stencil-domain",
            Error::IllConditioned(_) => "ill-conditioned",
            Error::RingCollapse { .. } => "ring-collapse",
            Error::CurveFailure(_) => "curve-failure",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
