use thiserror::Error;

/// Errors produced by the precoding library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A configuration value is invalid; the message names the field.
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    /// A numerical routine failed to meet its contract.
    #[error("internal error: {0}")]
    Internal(String),
    /// A candidate-pattern or config file could not be loaded.
    #[error("load error: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
