use thiserror::Error;

/// Errors surfaced by the simulation, training, and certification layers.
///
/// The variants are deliberately coarse: callers mostly need to distinguish
/// "you gave me bad input" from "the numerics went sideways" from "a node
/// touched state it does not own".
#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument or configuration value (dimension mismatch, empty graph,
    /// negative probability, ...). The message names the offending field.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation failed to converge or produced non-finite values.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Node code tried to read (or a message was injected on) a channel that
    /// does not exist in the communication graph. `reader` is the node whose
    /// handler made the access, `target` the node whose mailbox slot it asked
    /// for, and `phase` the schedule phase in which it happened.
    #[error("locality violation: node {reader} accessed non-neighbor {target} during {phase}")]
    LocalityViolation {
        reader: usize,
        target: usize,
        phase: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
