use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::fault::{FaultEngine, FaultOutcome, FaultPlan};
use crate::types::{
    MultipartUpload, ObjectMeta, ObjectRef, StorageAccounting, StoreMetrics, UploadState,
};
use crate::{ObjectStore, PartSpec, StoreError, StoreResult};

/// Configuration for the simulated store.
#[derive(Debug, Clone, Default)]
pub struct SimConfig {
    /// When set, all content and metadata is written through to this
    /// directory so separate processes can observe the store across
    /// crash/restart boundaries. Access is single-process at a time.
    pub persist_dir: Option<PathBuf>,
    pub fault_plan: Option<FaultPlan>,
}

/// Deterministic in-process object store.
///
/// Metadata mutations are serialized behind one lock; content reads happen
/// outside it. Injected latency and failures apply to the transfer path
/// (head, copy, multipart operations) in request-arrival order; dataset
/// administration (`put_object`, `get_object`, `create_bucket`, listing) is
/// never faulted so tests can always build and verify datasets.
#[derive(Clone)]
pub struct SimStore {
    inner: Arc<Inner>,
}

struct Inner {
    state: Mutex<State>,
    faults: Option<Mutex<FaultEngine>>,
    inflight_writes: AtomicU64,
    max_inflight_writes: AtomicU64,
    persist: Option<PathBuf>,
}

#[derive(Default)]
struct State {
    buckets: BTreeMap<String, BucketState>,
    counters: Counters,
}

#[derive(Default)]
struct BucketState {
    objects: BTreeMap<String, ObjectRec>,
    uploads: BTreeMap<String, UploadRec>,
}

#[derive(Clone)]
struct ObjectRec {
    size: u64,
    etag: String,
    content: Content,
}

struct UploadRec {
    key: String,
    state: UploadState,
    parts: BTreeMap<u32, PartRec>,
    final_etag: Option<String>,
}

#[derive(Clone)]
struct PartRec {
    len: u64,
    etag: String,
    content: Content,
}

#[derive(Clone)]
enum Content {
    Mem(Arc<Vec<u8>>),
    Disk(PathBuf),
}

impl Content {
    fn read_range(&self, start: u64, len: u64) -> StoreResult<Vec<u8>> {
        match self {
            Content::Mem(bytes) => Ok(bytes[start as usize..(start + len) as usize].to_vec()),
            Content::Disk(path) => {
                let mut file = fs::File::open(path).map_err(io_err)?;
                file.seek(SeekFrom::Start(start)).map_err(io_err)?;
                let mut buf = vec![0u8; len as usize];
                file.read_exact(&mut buf).map_err(io_err)?;
                Ok(buf)
            }
        }
    }
}

/// Cross-restart copy counters, persisted as `metrics.json` when the store
/// is disk-backed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Counters {
    per_key_copies_started: BTreeMap<String, u64>,
    per_key_copies_completed: BTreeMap<String, u64>,
    bytes_copied_total: u64,
}

#[derive(Serialize, Deserialize)]
struct ObjectMetaFile {
    key: String,
    size: u64,
    etag: String,
}

#[derive(Serialize, Deserialize)]
struct UploadMetaFile {
    key: String,
    state: UploadState,
    final_etag: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PartMetaFile {
    len: u64,
    etag: String,
}

fn io_err(err: std::io::Error) -> StoreError {
    StoreError::backend(err.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_bucket_name(bucket: &str) -> bool {
    !bucket.is_empty()
        && bucket
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '-' | '.' | '_'))
}

fn hex_key(key: &str) -> String {
    hex::encode(key.as_bytes())
}

/// Writes `bytes` to `path` atomically via a same-directory temp file.
fn write_atomic(path: &Path, bytes: &[u8]) -> StoreResult<()> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    path.with_file_name(format!("{name}.{}.tmp", Uuid::new_v4().simple()))
}

impl SimStore {
    /// Purely in-memory store with no faults.
    pub fn in_memory() -> Self {
        SimStore::open(SimConfig::default()).expect("in-memory store cannot fail to open")
    }

    /// In-memory store with the given fault plan.
    pub fn with_faults(plan: FaultPlan) -> Self {
        SimStore::open(SimConfig {
            fault_plan: Some(plan),
            ..SimConfig::default()
        })
        .expect("in-memory store cannot fail to open")
    }

    pub fn open(config: SimConfig) -> StoreResult<Self> {
        let mut state = State::default();
        if let Some(root) = &config.persist_dir {
            fs::create_dir_all(root).map_err(io_err)?;
            state = load_state(root)?;
        }
        Ok(SimStore {
            inner: Arc::new(Inner {
                state: Mutex::new(state),
                faults: config.fault_plan.map(|plan| Mutex::new(FaultEngine::new(plan))),
                inflight_writes: AtomicU64::new(0),
                max_inflight_writes: AtomicU64::new(0),
                persist: config.persist_dir,
            }),
        })
    }

    /// Current byte accounting: visible objects plus parts of open uploads.
    pub fn accounting(&self) -> StorageAccounting {
        let state = self.inner.state.lock();
        let mut visible = 0u64;
        let mut open = 0u64;
        for bucket in state.buckets.values() {
            visible += bucket.objects.values().map(|o| o.size).sum::<u64>();
            for upload in bucket.uploads.values() {
                if upload.state == UploadState::Open {
                    open += upload.parts.values().map(|p| p.len).sum::<u64>();
                }
            }
        }
        StorageAccounting {
            visible_object_bytes: visible,
            open_upload_bytes: open,
            total_stored_bytes: visible + open,
        }
    }

    /// Zeroes the gauges and copy counters (and the persisted counter file).
    pub fn reset_metrics(&self) -> StoreResult<()> {
        let mut state = self.inner.state.lock();
        state.counters = Counters::default();
        self.inner.inflight_writes.store(0, Ordering::SeqCst);
        self.inner.max_inflight_writes.store(0, Ordering::SeqCst);
        self.persist_counters(&state.counters)
    }

    /// Reads the persisted copy counters from a store directory without
    /// opening the store; safe while another process owns the directory
    /// because the file is replaced atomically.
    pub fn read_metrics_file(root: &Path) -> StoreResult<StoreMetrics> {
        let raw = fs::read(root.join("metrics.json")).map_err(io_err)?;
        let counters: Counters =
            serde_json::from_slice(&raw).map_err(|err| StoreError::backend(err.to_string()))?;
        Ok(StoreMetrics {
            inflight_writes: 0,
            max_inflight_writes: 0,
            per_key_copies_started: counters.per_key_copies_started,
            per_key_copies_completed: counters.per_key_copies_completed,
            bytes_copied_total: counters.bytes_copied_total,
        })
    }

    async fn fault_gate(&self, source_key: Option<&str>) -> StoreResult<()> {
        let Some(faults) = &self.inner.faults else {
            return Ok(());
        };
        let decision = faults.lock().decide(source_key);
        if let Some(latency) = decision.latency {
            tokio::time::sleep(latency).await;
        }
        match decision.outcome {
            FaultOutcome::Proceed => Ok(()),
            FaultOutcome::Intermittent => {
                Err(StoreError::intermittent("injected intermittent failure"))
            }
            FaultOutcome::Denied { key } => Err(StoreError::PermissionDenied { key }),
        }
    }

    fn write_gauge(&self) -> WriteGuard<'_> {
        let current = self.inner.inflight_writes.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner
            .max_inflight_writes
            .fetch_max(current, Ordering::SeqCst);
        WriteGuard { inner: &self.inner }
    }

    fn persist_counters(&self, counters: &Counters) -> StoreResult<()> {
        let Some(root) = &self.inner.persist else {
            return Ok(());
        };
        let raw = serde_json::to_vec_pretty(counters)
            .map_err(|err| StoreError::backend(err.to_string()))?;
        write_atomic(&root.join("metrics.json"), &raw)
    }

    fn bucket_dir(&self, bucket: &str) -> Option<PathBuf> {
        self.inner.persist.as_ref().map(|root| root.join(bucket))
    }
}

/// RAII in-flight write marker; decrements on drop so cancelled requests
/// never leak gauge counts.
struct WriteGuard<'a> {
    inner: &'a Inner,
}

impl Drop for WriteGuard<'_> {
    fn drop(&mut self) {
        self.inner.inflight_writes.fetch_sub(1, Ordering::SeqCst);
    }
}

fn load_state(root: &Path) -> StoreResult<State> {
    let mut state = State::default();
    let metrics_path = root.join("metrics.json");
    if metrics_path.exists() {
        let raw = fs::read(&metrics_path).map_err(io_err)?;
        state.counters =
            serde_json::from_slice(&raw).map_err(|err| StoreError::backend(err.to_string()))?;
    }
    for entry in fs::read_dir(root).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if !entry.file_type().map_err(io_err)?.is_dir() {
            continue;
        }
        let bucket_name = match entry.file_name().into_string() {
            Ok(name) => name,
            Err(_) => continue,
        };
        let mut bucket = BucketState::default();
        load_objects(&entry.path().join("objects"), &mut bucket)?;
        load_uploads(&entry.path().join("uploads"), &mut bucket)?;
        state.buckets.insert(bucket_name, bucket);
    }
    Ok(state)
}

fn load_objects(dir: &Path, bucket: &mut BucketState) -> StoreResult<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("tmp") {
            let _ = fs::remove_file(&path);
            continue;
        }
        if path.extension().and_then(|e| e.to_str()) != Some("meta") {
            continue;
        }
        let raw = fs::read(&path).map_err(io_err)?;
        let meta: ObjectMetaFile =
            serde_json::from_slice(&raw).map_err(|err| StoreError::backend(err.to_string()))?;
        let bin = path.with_extension("bin");
        if !bin.exists() {
            continue;
        }
        bucket.objects.insert(
            meta.key.clone(),
            ObjectRec {
                size: meta.size,
                etag: meta.etag,
                content: Content::Disk(bin),
            },
        );
    }
    Ok(())
}

fn load_uploads(dir: &Path, bucket: &mut BucketState) -> StoreResult<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let upload_dir = entry.map_err(io_err)?.path();
        if !upload_dir.is_dir() {
            continue;
        }
        let upload_id = match upload_dir.file_name().and_then(|n| n.to_str()) {
            Some(id) => id.to_string(),
            None => continue,
        };
        let meta_path = upload_dir.join("meta.json");
        if !meta_path.exists() {
            continue;
        }
        let raw = fs::read(&meta_path).map_err(io_err)?;
        let meta: UploadMetaFile =
            serde_json::from_slice(&raw).map_err(|err| StoreError::backend(err.to_string()))?;
        let mut parts = BTreeMap::new();
        if meta.state == UploadState::Open {
            let parts_dir = upload_dir.join("parts");
            if parts_dir.exists() {
                for part_entry in fs::read_dir(&parts_dir).map_err(io_err)? {
                    let part_path = part_entry.map_err(io_err)?.path();
                    if part_path.extension().and_then(|e| e.to_str()) == Some("tmp") {
                        let _ = fs::remove_file(&part_path);
                        continue;
                    }
                    if part_path.extension().and_then(|e| e.to_str()) != Some("meta") {
                        continue;
                    }
                    let number: u32 = match part_path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .and_then(|s| s.parse().ok())
                    {
                        Some(n) => n,
                        None => continue,
                    };
                    let raw = fs::read(&part_path).map_err(io_err)?;
                    let part_meta: PartMetaFile = serde_json::from_slice(&raw)
                        .map_err(|err| StoreError::backend(err.to_string()))?;
                    let bin = part_path.with_extension("bin");
                    if !bin.exists() {
                        continue;
                    }
                    parts.insert(
                        number,
                        PartRec {
                            len: part_meta.len,
                            etag: part_meta.etag,
                            content: Content::Disk(bin),
                        },
                    );
                }
            }
        }
        bucket.uploads.insert(
            upload_id,
            UploadRec {
                key: meta.key,
                state: meta.state,
                parts,
                final_etag: meta.final_etag,
            },
        );
    }
    Ok(())
}

#[async_trait]
impl ObjectStore for SimStore {
    async fn create_bucket(&self, bucket: &str) -> StoreResult<()> {
        if !valid_bucket_name(bucket) {
            return Err(StoreError::InvalidRequest {
                reason: format!("invalid bucket name: {bucket:?}"),
            });
        }
        if let Some(dir) = self.bucket_dir(bucket) {
            fs::create_dir_all(dir.join("objects")).map_err(io_err)?;
            fs::create_dir_all(dir.join("uploads")).map_err(io_err)?;
        }
        self.inner
            .state
            .lock()
            .buckets
            .entry(bucket.to_string())
            .or_default();
        Ok(())
    }

    async fn put_object(&self, target: &ObjectRef, content: Vec<u8>) -> StoreResult<String> {
        target
            .validate()
            .map_err(|reason| StoreError::InvalidRequest { reason })?;
        let etag = sha256_hex(&content);
        let size = content.len() as u64;
        let mut state = self.inner.state.lock();
        if !state.buckets.contains_key(&target.bucket) {
            return Err(StoreError::NoSuchBucket {
                bucket: target.bucket.clone(),
            });
        }
        let stored = if let Some(dir) = self.bucket_dir(&target.bucket) {
            let bin = dir.join("objects").join(format!("{}.bin", hex_key(&target.key)));
            let meta = bin.with_extension("meta");
            write_atomic(&bin, &content)?;
            let meta_file = ObjectMetaFile {
                key: target.key.clone(),
                size,
                etag: etag.clone(),
            };
            write_atomic(
                &meta,
                &serde_json::to_vec(&meta_file)
                    .map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
            Content::Disk(bin)
        } else {
            Content::Mem(Arc::new(content))
        };
        let bucket = state
            .buckets
            .get_mut(&target.bucket)
            .expect("bucket presence checked above");
        bucket.objects.insert(
            target.key.clone(),
            ObjectRec {
                size,
                etag: etag.clone(),
                content: stored,
            },
        );
        Ok(etag)
    }

    async fn get_object(&self, source: &ObjectRef) -> StoreResult<Vec<u8>> {
        let (content, size) = {
            let state = self.inner.state.lock();
            let rec = state
                .buckets
                .get(&source.bucket)
                .and_then(|b| b.objects.get(&source.key))
                .ok_or_else(|| StoreError::NotFound {
                    bucket: source.bucket.clone(),
                    key: source.key.clone(),
                })?;
            (rec.content.clone(), rec.size)
        };
        if size == 0 {
            return Ok(Vec::new());
        }
        content.read_range(0, size)
    }

    async fn head_object(&self, source: &ObjectRef) -> StoreResult<ObjectMeta> {
        self.fault_gate(Some(&source.key)).await?;
        let state = self.inner.state.lock();
        let rec = state
            .buckets
            .get(&source.bucket)
            .and_then(|b| b.objects.get(&source.key))
            .ok_or_else(|| StoreError::NotFound {
                bucket: source.bucket.clone(),
                key: source.key.clone(),
            })?;
        Ok(ObjectMeta {
            size: rec.size,
            etag: rec.etag.clone(),
            readable: true,
        })
    }

    async fn copy_object(&self, source: &ObjectRef, target: &ObjectRef) -> StoreResult<String> {
        let _gauge = self.write_gauge();
        self.fault_gate(Some(&source.key)).await?;
        let (content, size) = {
            let mut state = self.inner.state.lock();
            if !state.buckets.contains_key(&target.bucket) {
                return Err(StoreError::NoSuchBucket {
                    bucket: target.bucket.clone(),
                });
            }
            let rec = state
                .buckets
                .get(&source.bucket)
                .and_then(|b| b.objects.get(&source.key))
                .ok_or_else(|| StoreError::NotFound {
                    bucket: source.bucket.clone(),
                    key: source.key.clone(),
                })?
                .clone();
            *state
                .counters
                .per_key_copies_started
                .entry(target.key.clone())
                .or_insert(0) += 1;
            let counters = state.counters.clone();
            self.persist_counters(&counters)?;
            (rec.content, rec.size)
        };
        let bytes = if size == 0 {
            Vec::new()
        } else {
            content.read_range(0, size)?
        };
        let etag = self.put_object(target, bytes).await?;
        let mut state = self.inner.state.lock();
        *state
            .counters
            .per_key_copies_completed
            .entry(target.key.clone())
            .or_insert(0) += 1;
        state.counters.bytes_copied_total += size;
        let counters = state.counters.clone();
        self.persist_counters(&counters)?;
        Ok(etag)
    }

    async fn create_multipart(&self, target: &ObjectRef) -> StoreResult<MultipartUpload> {
        let _gauge = self.write_gauge();
        self.fault_gate(None).await?;
        target
            .validate()
            .map_err(|reason| StoreError::InvalidRequest { reason })?;
        let upload_id = Uuid::new_v4().simple().to_string();
        let mut state = self.inner.state.lock();
        if !state.buckets.contains_key(&target.bucket) {
            return Err(StoreError::NoSuchBucket {
                bucket: target.bucket.clone(),
            });
        }
        if let Some(dir) = self.bucket_dir(&target.bucket) {
            let upload_dir = dir.join("uploads").join(&upload_id);
            fs::create_dir_all(upload_dir.join("parts")).map_err(io_err)?;
            let meta = UploadMetaFile {
                key: target.key.clone(),
                state: UploadState::Open,
                final_etag: None,
            };
            write_atomic(
                &upload_dir.join("meta.json"),
                &serde_json::to_vec(&meta).map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
        }
        let bucket = state
            .buckets
            .get_mut(&target.bucket)
            .expect("bucket presence checked above");
        bucket.uploads.insert(
            upload_id.clone(),
            UploadRec {
                key: target.key.clone(),
                state: UploadState::Open,
                parts: BTreeMap::new(),
                final_etag: None,
            },
        );
        *state
            .counters
            .per_key_copies_started
            .entry(target.key.clone())
            .or_insert(0) += 1;
        let counters = state.counters.clone();
        self.persist_counters(&counters)?;
        Ok(MultipartUpload {
            upload_id,
            target: target.clone(),
            completed_parts: BTreeMap::new(),
            state: UploadState::Open,
        })
    }

    async fn upload_part_copy(
        &self,
        upload: &MultipartUpload,
        source: &ObjectRef,
        part: &PartSpec,
    ) -> StoreResult<String> {
        let _gauge = self.write_gauge();
        self.fault_gate(Some(&source.key)).await?;
        if part.end < part.start {
            return Err(StoreError::RangeInvalid {
                start: part.start,
                end: part.end,
                size: 0,
            });
        }
        let content = {
            let state = self.inner.state.lock();
            let bucket = state.buckets.get(&upload.target.bucket).ok_or_else(|| {
                StoreError::NoSuchBucket {
                    bucket: upload.target.bucket.clone(),
                }
            })?;
            let rec = bucket
                .uploads
                .get(&upload.upload_id)
                .ok_or_else(|| StoreError::UploadNotFound {
                    upload_id: upload.upload_id.clone(),
                })?;
            if rec.state != UploadState::Open {
                return Err(StoreError::UploadNotFound {
                    upload_id: upload.upload_id.clone(),
                });
            }
            let source_rec = state
                .buckets
                .get(&source.bucket)
                .and_then(|b| b.objects.get(&source.key))
                .ok_or_else(|| StoreError::NotFound {
                    bucket: source.bucket.clone(),
                    key: source.key.clone(),
                })?;
            if part.end >= source_rec.size {
                return Err(StoreError::RangeInvalid {
                    start: part.start,
                    end: part.end,
                    size: source_rec.size,
                });
            }
            source_rec.content.clone()
        };

        let len = part.byte_len();
        let bytes = content.read_range(part.start, len)?;
        let etag = sha256_hex(&bytes);

        let stored = if let Some(dir) = self.bucket_dir(&upload.target.bucket) {
            let parts_dir = dir.join("uploads").join(&upload.upload_id).join("parts");
            let bin = parts_dir.join(format!("{}.bin", part.part_number));
            let meta = bin.with_extension("meta");
            write_atomic(&bin, &bytes)?;
            let meta_file = PartMetaFile {
                len,
                etag: etag.clone(),
            };
            write_atomic(
                &meta,
                &serde_json::to_vec(&meta_file)
                    .map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
            Content::Disk(bin)
        } else {
            Content::Mem(Arc::new(bytes))
        };

        let mut state = self.inner.state.lock();
        let rec = state
            .buckets
            .get_mut(&upload.target.bucket)
            .and_then(|b| b.uploads.get_mut(&upload.upload_id))
            .filter(|rec| rec.state == UploadState::Open)
            .ok_or_else(|| StoreError::UploadNotFound {
                upload_id: upload.upload_id.clone(),
            })?;
        rec.parts.insert(
            part.part_number,
            PartRec {
                len,
                etag: etag.clone(),
                content: stored,
            },
        );
        Ok(etag)
    }

    async fn complete_multipart(
        &self,
        upload: &MultipartUpload,
        parts: &[(u32, String)],
    ) -> StoreResult<String> {
        let _gauge = self.write_gauge();
        self.fault_gate(None).await?;
        let mut state = self.inner.state.lock();
        let bucket_dir = self.bucket_dir(&upload.target.bucket);
        let bucket = state.buckets.get_mut(&upload.target.bucket).ok_or_else(|| {
            StoreError::NoSuchBucket {
                bucket: upload.target.bucket.clone(),
            }
        })?;
        let rec = bucket
            .uploads
            .get_mut(&upload.upload_id)
            .ok_or_else(|| StoreError::UploadNotFound {
                upload_id: upload.upload_id.clone(),
            })?;
        match rec.state {
            UploadState::Completed => {
                return rec.final_etag.clone().ok_or_else(|| {
                    StoreError::backend("completed upload missing final etag")
                });
            }
            UploadState::Aborted => {
                return Err(StoreError::UploadNotFound {
                    upload_id: upload.upload_id.clone(),
                });
            }
            UploadState::Open => {}
        }
        if parts.is_empty() {
            return Err(StoreError::InvalidRequest {
                reason: "complete requires at least one part".into(),
            });
        }
        for (idx, (number, etag)) in parts.iter().enumerate() {
            let expected = (idx + 1) as u32;
            if *number != expected {
                return Err(StoreError::MissingPart {
                    part_number: expected,
                });
            }
            match rec.parts.get(number) {
                Some(part) if part.etag == *etag => {}
                _ => {
                    return Err(StoreError::MissingPart {
                        part_number: *number,
                    })
                }
            }
        }

        let key = rec.key.clone();
        let mut hasher = Sha256::new();
        let mut assembled: Vec<u8> = Vec::new();
        let mut total: u64 = 0;
        let mut object_content: Option<Content> = None;

        if let Some(dir) = &bucket_dir {
            let bin = dir.join("objects").join(format!("{}.bin", hex_key(&key)));
            let tmp = tmp_sibling(&bin);
            {
                let mut out = fs::File::create(&tmp).map_err(io_err)?;
                for number in 1..=parts.len() as u32 {
                    let part = rec.parts.get(&number).expect("validated above");
                    let bytes = part.content.read_range(0, part.len)?;
                    hasher.update(&bytes);
                    out.write_all(&bytes).map_err(io_err)?;
                    total += part.len;
                }
            }
            fs::rename(&tmp, &bin).map_err(io_err)?;
            object_content = Some(Content::Disk(bin));
        } else {
            for number in 1..=parts.len() as u32 {
                let part = rec.parts.get(&number).expect("validated above");
                let bytes = part.content.read_range(0, part.len)?;
                hasher.update(&bytes);
                total += part.len;
                assembled.extend_from_slice(&bytes);
            }
        }
        let etag = hex::encode(hasher.finalize());

        if let Some(dir) = &bucket_dir {
            let meta_file = ObjectMetaFile {
                key: key.clone(),
                size: total,
                etag: etag.clone(),
            };
            write_atomic(
                &dir.join("objects")
                    .join(format!("{}.meta", hex_key(&key))),
                &serde_json::to_vec(&meta_file)
                    .map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
            let upload_dir = dir.join("uploads").join(&upload.upload_id);
            let meta = UploadMetaFile {
                key: key.clone(),
                state: UploadState::Completed,
                final_etag: Some(etag.clone()),
            };
            write_atomic(
                &upload_dir.join("meta.json"),
                &serde_json::to_vec(&meta).map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
            let _ = fs::remove_dir_all(upload_dir.join("parts"));
        }

        rec.state = UploadState::Completed;
        rec.parts.clear();
        rec.final_etag = Some(etag.clone());
        bucket.objects.insert(
            key.clone(),
            ObjectRec {
                size: total,
                etag: etag.clone(),
                content: object_content.unwrap_or_else(|| Content::Mem(Arc::new(assembled))),
            },
        );
        *state
            .counters
            .per_key_copies_completed
            .entry(key)
            .or_insert(0) += 1;
        state.counters.bytes_copied_total += total;
        let counters = state.counters.clone();
        self.persist_counters(&counters)?;
        Ok(etag)
    }

    async fn abort_multipart(&self, upload: &MultipartUpload) -> StoreResult<()> {
        let _gauge = self.write_gauge();
        self.fault_gate(None).await?;
        let mut state = self.inner.state.lock();
        let Some(bucket) = state.buckets.get_mut(&upload.target.bucket) else {
            return Ok(());
        };
        let Some(rec) = bucket.uploads.get_mut(&upload.upload_id) else {
            return Ok(());
        };
        if rec.state != UploadState::Open {
            return Ok(());
        }
        rec.state = UploadState::Aborted;
        rec.parts.clear();
        if let Some(dir) = self.bucket_dir(&upload.target.bucket) {
            let upload_dir = dir.join("uploads").join(&upload.upload_id);
            let meta = UploadMetaFile {
                key: rec.key.clone(),
                state: UploadState::Aborted,
                final_etag: None,
            };
            write_atomic(
                &upload_dir.join("meta.json"),
                &serde_json::to_vec(&meta).map_err(|err| StoreError::backend(err.to_string()))?,
            )?;
            let _ = fs::remove_dir_all(upload_dir.join("parts"));
        }
        Ok(())
    }

    async fn list_incomplete_uploads(&self, bucket: &str) -> StoreResult<Vec<MultipartUpload>> {
        let state = self.inner.state.lock();
        let bucket_state = state
            .buckets
            .get(bucket)
            .ok_or_else(|| StoreError::NoSuchBucket {
                bucket: bucket.to_string(),
            })?;
        Ok(bucket_state
            .uploads
            .iter()
            .filter(|(_, rec)| rec.state == UploadState::Open)
            .map(|(id, rec)| MultipartUpload {
                upload_id: id.clone(),
                target: ObjectRef::new(bucket, rec.key.clone()),
                completed_parts: rec
                    .parts
                    .iter()
                    .map(|(n, p)| (*n, p.etag.clone()))
                    .collect(),
                state: UploadState::Open,
            })
            .collect())
    }

    fn instrument(&self) -> Option<StoreMetrics> {
        let state = self.inner.state.lock();
        Some(StoreMetrics {
            inflight_writes: self.inner.inflight_writes.load(Ordering::SeqCst),
            max_inflight_writes: self.inner.max_inflight_writes.load(Ordering::SeqCst),
            per_key_copies_started: state.counters.per_key_copies_started.clone(),
            per_key_copies_completed: state.counters.per_key_copies_completed.clone(),
            bytes_copied_total: state.counters.bytes_copied_total,
        })
    }
}
