use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A configuration value is outside its allowed range.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
    /// A value has no defined result, e.g. cosine of a zero vector.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
    /// An object is in a state that does not allow the request.
    #[error("invalid state: {0}")]
    State(String),
    /// Frames were delivered out of order.
    #[error("frame {got} is not after the last processed frame {last}")]
    Sequencing { last: u64, got: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Error {
    Error::Config {
        key,
        reason: reason.into(),
    }
}
