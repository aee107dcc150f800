use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure surfaces of the
/// estimation pipeline: bad specifications, bad data, numeric domain
/// violations, and optimizer-level failures.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
