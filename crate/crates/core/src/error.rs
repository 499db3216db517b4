use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("design construction failed: {0}")]
    ConstructionFailure(String),

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("Fisher information undefined: {0}")]
    UndefinedInformation(String),

    #[error("size guard exceeded: {what} ({size} > {limit})")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("unreliable relative phase between blocks {left} and {right} at level {level}")]
    UnreliablePhase {
        level: usize,
        left: usize,
        right: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable kind, used for CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidDesign(_) => "invalid_design",
            Error::ConstructionFailure(_) => "construction_failure",
            Error::OptimizationFailure(_) => "optimization_failure",
            Error::UndefinedInformation(_) => "undefined_information",
            Error::SizeGuard { .. } => "size_guard",
            Error::UnreliablePhase { .. } => "unreliable_phase",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
