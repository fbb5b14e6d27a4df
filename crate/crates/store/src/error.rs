use thiserror::Error;

/// Errors surfaced by object-store backends.
///
/// The taxonomy is deliberately two-class: intermittent errors are expected
/// to resolve on retry, everything identified by name here (missing objects,
/// permissions, bad ranges) is permanent. Callers map variants to a retry
/// decision; see the transfer engine's classifier.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no such bucket: {bucket}")]
    NoSuchBucket { bucket: String },

    #[error("object not found: {bucket}/{key}")]
    NotFound { bucket: String, key: String },

    #[error("permission denied reading key: {key}")]
    PermissionDenied { key: String },

    #[error("invalid range [{start}, {end}] for object of {size} bytes")]
    RangeInvalid { start: u64, end: u64, size: u64 },

    #[error("multipart upload not found: {upload_id}")]
    UploadNotFound { upload_id: String },

    #[error("part {part_number} missing or does not match an uploaded part")]
    MissingPart { part_number: u32 },

    #[error("intermittent error: {reason}")]
    Intermittent { reason: String },

    #[error("invalid request: {reason}")]
    InvalidRequest { reason: String },

    #[error("backend error: {reason}")]
    Backend { reason: String },
}

impl StoreError {
    pub fn backend(reason: impl Into<String>) -> Self {
        StoreError::Backend {
            reason: reason.into(),
        }
    }

    pub fn intermittent(reason: impl Into<String>) -> Self {
        StoreError::Intermittent {
            reason: reason.into(),
        }
    }
}
