use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A bucket/key pair naming one object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub bucket: String,
    pub key: String,
}

impl ObjectRef {
    pub fn new(bucket: impl Into<String>, key: impl Into<String>) -> Self {
        ObjectRef {
            bucket: bucket.into(),
            key: key.into(),
        }
    }

    /// Validates the naming rules: both parts non-empty, key without a
    /// leading slash.
    pub fn validate(&self) -> Result<(), String> {
        if self.bucket.is_empty() {
            return Err("bucket must be non-empty".into());
        }
        if self.key.is_empty() {
            return Err("key must be non-empty".into());
        }
        if self.key.starts_with('/') {
            return Err(format!("key must not start with '/': {}", self.key));
        }
        Ok(())
    }
}

impl std::fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.bucket, self.key)
    }
}

/// Metadata returned by a head request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub size: u64,
    pub etag: String,
    pub readable: bool,
}

/// Lifecycle of a multipart upload session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UploadState {
    Open,
    Completed,
    Aborted,
}

/// A server-side multipart copy session for one target object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultipartUpload {
    pub upload_id: String,
    pub target: ObjectRef,
    /// Parts observed so far, part_number to part etag. Parts may land in
    /// any order; completion requires 1..=N present exactly once.
    pub completed_parts: BTreeMap<u32, String>,
    pub state: UploadState,
}

/// Counters exposed by the simulated backend for test assertions.
///
/// The write gauge covers the copy-path write operations (create multipart,
/// part copy, complete, abort, direct copy); dataset-administration reads
/// and writes do not count against it. Copy counters are keyed by target
/// key: `started` increments when a copy opens (multipart create or direct
/// copy begin), `completed` when a target object becomes visible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StoreMetrics {
    pub inflight_writes: u64,
    pub max_inflight_writes: u64,
    pub per_key_copies_started: BTreeMap<String, u64>,
    pub per_key_copies_completed: BTreeMap<String, u64>,
    pub bytes_copied_total: u64,
}

/// Byte accounting over the simulated store: everything it holds is either
/// a visible object or a part of a still-open upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageAccounting {
    pub visible_object_bytes: u64,
    pub open_upload_bytes: u64,
    pub total_stored_bytes: u64,
}
