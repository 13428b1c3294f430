//! Error type shared by every module in the crate.
//!
//! Variants fall into two broad classes that the CLI maps onto exit codes:
//! input decoding problems (I/O, malformed files, bad motion-description
//! documents) and semantic problems (shape mismatches, invariant violations,
//! numerically degenerate inputs).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic {found:?}, not a recognized motion map file")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found}")]
    UnsupportedVersion { found: u32 },

    #[error("file truncated while reading {context}")]
    Truncated { context: String },

    #[error("malformed file: {message}")]
    Format { message: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("validation failed: {message}")]
    Validation { message: String },

    #[error("shape mismatch: {message}")]
    ShapeMismatch { message: String },

    #[error("channel count {channels} outside 1..={max}")]
    ChannelsOutOfRange { channels: usize, max: usize },

    #[error("{found} foreground pixels, need at least {needed}")]
    TooFewForeground { found: usize, needed: usize },

    #[error("{found} patches, need at least 2")]
    TooFewPatches { found: usize },

    #[error("stride {dt} not usable with {frames} frames")]
    BadStride { dt: usize, frames: usize },

    #[error("no candidate maps supplied")]
    EmptyCandidates,

    #[error("energy became non-finite at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },

    #[error("motion map carries no reference colors")]
    MissingColors,

    #[error("{path}: unknown label {label:?}")]
    UnknownLabel { path: String, label: String },

    #[error("duplicate patch id {id}")]
    DuplicatePatchId { id: u32 },

    #[error("{path}: missing required field")]
    MissingField { path: String },

    #[error("{path}: unexpected field")]
    UnexpectedField { path: String },

    #[error("{path}: expected {expected}")]
    TypeMismatch { path: String, expected: &'static str },

    #[error("patch id {id} not present in the segmentation")]
    UnknownPatch { id: u32 },

    #[error("patch id {id} has no usable pixels")]
    EmptyPatch { id: u32 },

    #[error("occlusion at pixel ({x}, {y}) covers the reference frame")]
    ReferenceOcclusion { x: usize, y: usize },
}

impl Error {
    /// True for errors caused by unreadable or unparsable input rather than
    /// by semantically invalid data.
    pub fn is_decode_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Truncated { .. }
                | Error::Format { .. }
                | Error::UnknownLabel { .. }
                | Error::DuplicatePatchId { .. }
                | Error::MissingField { .. }
                | Error::UnexpectedField { .. }
                | Error::TypeMismatch { .. }
        )
    }
}
