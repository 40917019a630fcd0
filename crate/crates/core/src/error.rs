use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value at step {step}, stage {stage}")]
    Explosion { step: usize, stage: usize },

    #[error("explicit Euler infeasible: dt*rho = {dt_rho:.6} exceeds {limit:.6}")]
    Infeasible { dt_rho: f64, limit: f64 },

    #[error("singular matrix: zero pivot in column {0}")]
    Singular(usize),

    #[error("matrix dimension {n} exceeds the dense eigensolver guard of {limit}; coarsen the grid")]
    TooLarge { n: usize, limit: usize },

    #[error("stability polynomial is unstable near z = 0")]
    UnstableAtOrigin,

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
