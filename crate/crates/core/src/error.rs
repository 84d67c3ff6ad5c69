use thiserror::Error;

use crate::ree::RoleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown role name {0:?}")]
    UnknownRole(String),

    #[error("dangling doc_id {0:?}: no such document")]
    DanglingDocId(String),

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("document {0:?} has no tokens")]
    EmptyDocument(String),

    #[error("document {0:?} contains an empty token")]
    EmptyToken(String),

    #[error("entity has no mentions")]
    EmptyEntity,

    #[error("mention span {begin}..={end} out of range for document {doc_id:?} with {len} tokens")]
    SpanOutOfRange {
        doc_id: String,
        begin: usize,
        end: usize,
        len: usize,
    },

    #[error("mention text {text:?} does not match span text {span_text:?} in document {doc_id:?}")]
    MentionTextMismatch {
        doc_id: String,
        text: String,
        span_text: String,
    },

    #[error("unknown doc_id {0:?} in predictions")]
    UnknownPrediction(String),

    #[error("{doc_id}: {role} entity {text:?} cannot be linearized: {reason}")]
    Unlinearizable {
        doc_id: String,
        role: RoleId,
        text: String,
        reason: String,
    },

    #[error("malformed pointer sequence at position {position} ({role}): {reason}")]
    MalformedSequence {
        role: String,
        position: usize,
        reason: String,
    },

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Parse and I/O level failures, as opposed to content validation.
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::UnknownRole(_) | Error::Json(_)
        )
    }
}
