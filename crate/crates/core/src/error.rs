use alloc::string::String;

/// Errors raised by the audit core.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    Malformed(String),
    /// The contest has no positive margin: a tie for the last winning seat,
    /// or the margin computation produced zero.
    #[error("contest {contest} has no unique outcome")]
    NoUniqueOutcome { contest: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate ballot identifier {0}")]
    DuplicateBallotId(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("randomness source failed")]
    Randomness,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
