use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("ragged input: row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("factor {factor} is identically zero")]
    DegenerateFactor { factor: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Ragged { .. } => "PARSE",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::Domain(_) => "DOMAIN",
            Error::Config(_) => "CONFIG",
            Error::Numerical(_) => "NUMERICAL",
            Error::DegenerateFactor { .. } => "DEGENERATE_FACTOR",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

/// Non-fatal conditions attached to an estimate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Warning {
    /// The ratio estimator landed on its upper search bound.
    AmbiguousFactorCount { k_hat: usize, r_max: usize },
    /// Residual variances below the floor were raised to it.
    FlooredVariance { columns: usize, floor: f64 },
    /// The selected autoregression was not stationary; a lower order was used.
    NonstationaryFallback { requested: usize, used: usize },
}
