use thiserror::Error;

/// Library-wide error type. `Config` maps to CLI exit code 3, everything else to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate coin: {0}")]
    DegenerateCoin(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("horizon too short: {0}")]
    Horizon(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            _ => 2,
        }
    }
}
