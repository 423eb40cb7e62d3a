use thiserror::Error;

/// Errors surfaced by construction, integration and I/O paths.
#[derive(Error, Debug)]
pub enum Error {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("site index {site} out of range 1..={n}")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("operation requires an ancilla but the layout has none")]
    NoAncilla,

    #[error("operation requires the full product representation")]
    ProductRepresentationRequired,

    #[error("operator is not Hermitian (max deviation {dev:.3e})")]
    NotHermitian { dev: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("trace drift {drift:.3e} exceeds 1e-7; run flagged")]
    TraceDrift { drift: f64 },

    #[error("positivity guard: min eigenvalue {min_eig:.3e} < -1e-6")]
    PositivityViolation { min_eig: f64 },

    #[error("boson truncation guard: top-level ancilla population {pop:.3e} > 1e-6; increase d_trunc")]
    TruncationGuard { pop: f64 },

    #[error("mean spin vanishes; squeezing parameter undefined")]
    VanishingMeanSpin,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate steady-state space (gap {gap:.3e})")]
    DegenerateSteadyState { gap: f64 },

    #[error("ensemble runs failed for seeds {seeds:?}: {message}")]
    EnsembleFailure { seeds: Vec<u64>, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
