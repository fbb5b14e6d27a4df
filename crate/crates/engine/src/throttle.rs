//! In-process write-request throttle.
//!
//! Each worker process holds a static share of the global request budget,
//! so the fleet-wide in-flight count stays under the cap by construction
//! with no cross-process coordination.

use std::sync::Arc;
use std::sync::atomic::{AtomicU32, Ordering};

use tokio::sync::Semaphore;

use crate::types::EngineError;

struct ThrottleInner {
    sem: Arc<Semaphore>,
    share: u32,
    outstanding: AtomicU32,
    max_outstanding: AtomicU32,
}

/// Bounded pool of write-request permits. Cloning shares the pool.
#[derive(Clone)]
pub struct Throttle {
    inner: Arc<ThrottleInner>,
}

/// An acquired permit; dropping it releases the slot.
pub struct ThrottlePermit {
    inner: Arc<ThrottleInner>,
}

impl Drop for ThrottlePermit {
    fn drop(&mut self) {
        let _ = release_one(&self.inner);
    }
}

fn release_one(inner: &ThrottleInner) -> Result<(), EngineError> {
    let mut current = inner.outstanding.load(Ordering::SeqCst);
    loop {
        if current == 0 {
            return Err(EngineError::ReleaseWithoutAcquire);
        }
        match inner.outstanding.compare_exchange(
            current,
            current - 1,
            Ordering::SeqCst,
            Ordering::SeqCst,
        ) {
            Ok(_) => {
                inner.sem.add_permits(1);
                return Ok(());
            }
            Err(observed) => current = observed,
        }
    }
}

impl Throttle {
    /// A throttle with `share` permits for this worker.
    pub fn new(share: u32) -> Self {
        assert!(share > 0, "throttle share must be positive");
        Throttle {
            inner: Arc::new(ThrottleInner {
                sem: Arc::new(Semaphore::new(share as usize)),
                share,
                outstanding: AtomicU32::new(0),
                max_outstanding: AtomicU32::new(0),
            }),
        }
    }

    /// Waits for a free slot and returns its permit.
    pub async fn acquire(&self) -> ThrottlePermit {
        let permit = self
            .inner
            .sem
            .clone()
            .acquire_owned()
            .await
            .expect("throttle semaphore closed");
        permit.forget();
        let now = self.inner.outstanding.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.max_outstanding.fetch_max(now, Ordering::SeqCst);
        ThrottlePermit {
            inner: self.inner.clone(),
        }
    }

    /// Releases one slot without a permit object. Errors when nothing is
    /// outstanding: a release must pair with an acquire.
    pub fn release(&self) -> Result<(), EngineError> {
        release_one(&self.inner)
    }

    /// Permits currently held.
    pub fn outstanding(&self) -> u32 {
        self.inner.outstanding.load(Ordering::SeqCst)
    }

    /// High-water mark of concurrently held permits.
    pub fn max_outstanding(&self) -> u32 {
        self.inner.max_outstanding.load(Ordering::SeqCst)
    }

    /// This worker's permit budget.
    pub fn share(&self) -> u32 {
        self.inner.share
    }
}
