use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stability index alpha = {0}: must lie in the open interval (0, 2)")]
    InvalidAlpha(f64),

    #[error("invalid dimension d = {0}: supported dimensions are 1..={max}", max = crate::point::MAX_DIM)]
    InvalidDimension(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("Lévy density is singular on the diagonal x = y")]
    Singular,

    #[error("point {point} is not in the required region: {what}")]
    OutsideRegion { point: String, what: &'static str },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("reflection kernel: {0}")]
    Kernel(String),

    #[error(
        "reflection kernel fails the minorization check: theta_hat = {theta_hat:.3e} < witness {witness:.3e} at {} probe(s)",
        violating.len()
    )]
    HypothesisViolated {
        theta_hat: f64,
        witness: f64,
        violating: Vec<String>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("perturbation series does not converge: fitted ratio gamma = {gamma:.4} after {levels} levels (tail bound {tail:.3e})")]
    NonConvergent { gamma: f64, levels: usize, tail: f64 },

    #[error("conservation violated: max |row sum - 1| = {deviation:.3e} exceeds {tolerance:.1e}")]
    Conservation { deviation: f64, tolerance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
