//! The one shared mutable cell of the pipeline: which checkpoint inference
//! uses right now.

use std::fmt;
use std::sync::{Arc, PoisonError, RwLock};

use crate::detectors::WeightCheckpoint;

/// Atomic replace, torn-read-free load. Readers get an `Arc` to an immutable
/// checkpoint, so a swap never disturbs a scoring pass already under way.
#[derive(Clone)]
pub struct DeployedSlot {
    inner: Arc<RwLock<Arc<WeightCheckpoint>>>,
}

impl DeployedSlot {
    pub fn new(ckpt: Arc<WeightCheckpoint>) -> Self {
        DeployedSlot {
            inner: Arc::new(RwLock::new(ckpt)),
        }
    }

    pub fn load(&self) -> Arc<WeightCheckpoint> {
        // the guarded value is a plain pointer swap; poisoning cannot leave
        // it half-written
        self.inner.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    /// Replaces the deployed checkpoint, returning the previous one.
    pub fn store(&self, ckpt: Arc<WeightCheckpoint>) -> Arc<WeightCheckpoint> {
        let mut guard = self.inner.write().unwrap_or_else(PoisonError::into_inner);
        std::mem::replace(&mut *guard, ckpt)
    }
}

impl fmt::Debug for DeployedSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.load();
        f.debug_struct("DeployedSlot")
            .field("version", &c.version)
            .field("provenance", &c.provenance)
            .finish()
    }
}
