//! Object-store abstraction for the mirroring engine.
//!
//! Two backends implement [`ObjectStore`]: [`SimStore`], a deterministic
//! in-process store with fault injection, optional on-disk persistence and
//! instrumentation for tests; and [`WireStore`], a minimal S3-compatible
//! REST client covering the multipart-copy subset (head, create, part copy
//! by range, complete, abort, list incomplete uploads).
//!
//! The transfer path never streams object bytes through the caller: part
//! copies are server-side range copies, which is the entire point of the
//! protocol subset chosen here.

mod error;
mod fault;
mod parts;
mod sigv4;
mod sim;
mod types;
mod wire;

pub use error::StoreError;
pub use fault::{FaultDecision, FaultEngine, FaultOutcome, FaultPlan, LatencyModel};
pub use parts::{compute_parts, PartSpec};
pub use sim::{SimConfig, SimStore};
pub use types::{
    MultipartUpload, ObjectMeta, ObjectRef, StorageAccounting, StoreMetrics, UploadState,
};
pub use wire::{WireConfig, WireStore};

use async_trait::async_trait;

pub type StoreResult<T> = Result<T, StoreError>;

/// Bucket/object API with server-side byte-range part copy.
///
/// `put_object`, `get_object` and `create_bucket` are administrative: the
/// harness uses them to build datasets and verify content. The transfer
/// engine itself only heads sources and issues copy operations.
#[async_trait]
pub trait ObjectStore: Send + Sync {
    async fn create_bucket(&self, bucket: &str) -> StoreResult<()>;

    async fn put_object(&self, target: &ObjectRef, content: Vec<u8>) -> StoreResult<String>;

    async fn get_object(&self, source: &ObjectRef) -> StoreResult<Vec<u8>>;

    async fn head_object(&self, source: &ObjectRef) -> StoreResult<ObjectMeta>;

    /// Single-request server-side copy, used for zero-byte objects where
    /// multipart semantics are undefined.
    async fn copy_object(&self, source: &ObjectRef, target: &ObjectRef) -> StoreResult<String>;

    async fn create_multipart(&self, target: &ObjectRef) -> StoreResult<MultipartUpload>;

    /// Copies `part`'s byte range of `source` into the upload. Idempotent:
    /// re-sending a part number overwrites the previous copy harmlessly.
    async fn upload_part_copy(
        &self,
        upload: &MultipartUpload,
        source: &ObjectRef,
        part: &PartSpec,
    ) -> StoreResult<String>;

    /// Assembles the target object from parts 1..=N. `parts` pairs each part
    /// number with the etag returned by its copy.
    async fn complete_multipart(
        &self,
        upload: &MultipartUpload,
        parts: &[(u32, String)],
    ) -> StoreResult<String>;

    /// Reclaims an upload's stored parts. Aborting a completed or unknown
    /// upload is a no-op.
    async fn abort_multipart(&self, upload: &MultipartUpload) -> StoreResult<()>;

    async fn list_incomplete_uploads(&self, bucket: &str) -> StoreResult<Vec<MultipartUpload>>;

    /// Instrumentation snapshot; `None` for backends that cannot observe
    /// themselves (the wire backend).
    fn instrument(&self) -> Option<StoreMetrics>;
}
