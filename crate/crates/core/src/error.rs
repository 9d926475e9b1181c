use std::io;

use thiserror::Error;

/// Everything that can go wrong in the toolkit.
///
/// Variants are grouped by who is at fault: malformed input data
/// (`Parse`, `Invalid`, `MissingField`, `LengthMismatch`, `Join`),
/// a bad parameter supplied by the caller (`Parameter`), or an evaluation
/// that is undefined on the given data (`SingleClass`, `NoValidReplicates`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id:?}: {message}")]
    Invalid { id: String, message: String },

    #[error("record {id:?}: {field} missing ({reason})")]
    MissingField {
        id: String,
        field: &'static str,
        reason: &'static str,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cannot join inputs: {0}")]
    Join(String),

    #[error("evaluation needs at least one member and one non-member (got {members} members, {nonmembers} non-members)")]
    SingleClass { members: usize, nonmembers: usize },

    #[error("all {0} bootstrap replicates contained a single class")]
    NoValidReplicates(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True when the error comes from the input data rather than from
    /// the caller's parameters or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Invalid { .. }
                | Error::MissingField { .. }
                | Error::LengthMismatch(_)
                | Error::Join(_)
                | Error::SingleClass { .. }
                | Error::NoValidReplicates(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
