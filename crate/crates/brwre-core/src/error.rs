//! Error types shared across the crate.
//!
//! Each failure class gets its own variant so callers (and the CLI exit-code
//! mapping) can distinguish bad configuration from runtime limits.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad offspring law, malformed spec, grid too
    /// coarse, and similar precondition failures that the caller can fix by
    /// changing inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// An index or scalar argument outside its documented range.
    #[error("range error: {0}")]
    Range(String),

    /// An operation was applied to an object in an unusable state
    /// (e.g. an empty density grid).
    #[error("state error: {0}")]
    State(String),

    /// Numerical failure: underflow past representable range, non-finite
    /// intermediate, failed convergence.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A resource budget was exceeded (particle cap, memory guard).
    #[error("resource error: {0}")]
    Resource(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn resource(msg: impl Into<String>) -> Self {
        Error::Resource(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
