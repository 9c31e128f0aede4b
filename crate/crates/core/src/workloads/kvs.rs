use std::collections::BTreeMap;

use thiserror::Error;

use crate::baselines::{AccessMode, ManagedStatePool, MsError};
use crate::heap::{HeapError, ObjectHandle, VnvHeap, RESIDENT_META_BYTES};
use crate::storage::{CostMeter, StorageDevice};

#[derive(Debug, Error)]
pub enum KvsError {
    #[error("key {0} not found")]
    KeyNotFound(u32),
    #[error("key {key} holds {want} bytes, got {got}")]
    SizeMismatch { key: u32, want: usize, got: usize },
    #[error("store is full")]
    Full,
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error(transparent)]
    ManagedState(#[from] MsError),
}

/// A key-value store with integer keys and fixed-size values per key. The
/// key index lives in ordinary memory and is not charged.
pub trait KvBackend {
    fn name(&self) -> &'static str;

    /// Inserts `key`, or updates it when present.
    fn put(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError>;

    fn get(&mut self, key: u32) -> Result<Vec<u8>, KvsError>;

    /// Overwrites the whole value of an existing key.
    fn update(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError>;

    /// Makes every value durable. Returns the words transferred.
    fn checkpoint(&mut self) -> Result<u64, KvsError>;

    fn cost(&self) -> CostMeter;

    fn reset_cost(&mut self);

    /// Bytes of management metadata for the current contents.
    fn metadata_bytes(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_len(key: u32, want: usize, got: usize) -> Result<(), KvsError> {
    if want != got {
        return Err(KvsError::SizeMismatch { key, want, got });
    }
    Ok(())
}

/// Values stored as heap objects, one per key.
pub struct VnvKvs<S: StorageDevice> {
    heap: VnvHeap<S>,
    index: BTreeMap<u32, ObjectHandle>,
}

impl<S: StorageDevice> VnvKvs<S> {
    pub fn new(heap: VnvHeap<S>) -> Self {
        VnvKvs {
            heap,
            index: BTreeMap::new(),
        }
    }

    pub fn heap(&self) -> &VnvHeap<S> {
        &self.heap
    }

    pub fn into_heap(self) -> VnvHeap<S> {
        self.heap
    }
}

impl<S: StorageDevice> KvBackend for VnvKvs<S> {
    fn name(&self) -> &'static str {
        "vnv"
    }

    fn put(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError> {
        if self.index.contains_key(&key) {
            return self.update(key, value);
        }
        let h = self.heap.alloc(value)?;
        self.index.insert(key, h);
        Ok(())
    }

    fn get(&mut self, key: u32) -> Result<Vec<u8>, KvsError> {
        let &h = self.index.get(&key).ok_or(KvsError::KeyNotFound(key))?;
        Ok(self.heap.get_ref(h)?.to_vec())
    }

    fn update(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError> {
        let &h = self.index.get(&key).ok_or(KvsError::KeyNotFound(key))?;
        check_len(key, h.len(), value.len())?;
        self.heap.get_mut(h)?.copy_from_slice(value);
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<u64, KvsError> {
        Ok(self.heap.persist()?.words_transferred)
    }

    fn cost(&self) -> CostMeter {
        self.heap.cost()
    }

    fn reset_cost(&mut self) {
        self.heap.reset_cost()
    }

    fn metadata_bytes(&self) -> usize {
        RESIDENT_META_BYTES * self.index.len()
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

/// Values packed back to back in a page-tracked pool.
pub struct MsKvs<S> {
    pool: ManagedStatePool<S>,
    index: BTreeMap<u32, (usize, usize)>,
    next: usize,
}

impl<S: StorageDevice> MsKvs<S> {
    pub fn new(pool: ManagedStatePool<S>) -> Self {
        MsKvs {
            pool,
            index: BTreeMap::new(),
            next: 0,
        }
    }

    pub fn pool(&self) -> &ManagedStatePool<S> {
        &self.pool
    }

    pub fn pool_mut(&mut self) -> &mut ManagedStatePool<S> {
        &mut self.pool
    }
}

impl<S: StorageDevice> KvBackend for MsKvs<S> {
    fn name(&self) -> &'static str {
        "managed-state"
    }

    fn put(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError> {
        if self.index.contains_key(&key) {
            return self.update(key, value);
        }
        if self.next + value.len() > self.pool.data_bytes() {
            return Err(KvsError::Full);
        }
        self.index.insert(key, (self.next, value.len()));
        self.next += value.len();
        self.update(key, value)
    }

    fn get(&mut self, key: u32) -> Result<Vec<u8>, KvsError> {
        let &(offset, len) = self.index.get(&key).ok_or(KvsError::KeyNotFound(key))?;
        let t = self.pool.open(offset, len, AccessMode::Read)?;
        let value = self.pool.slice(t)?.to_vec();
        self.pool.close(t)?;
        Ok(value)
    }

    fn update(&mut self, key: u32, value: &[u8]) -> Result<(), KvsError> {
        let &(offset, len) = self.index.get(&key).ok_or(KvsError::KeyNotFound(key))?;
        check_len(key, len, value.len())?;
        let t = self.pool.open(offset, len, AccessMode::Write)?;
        self.pool.slice_mut(t)?.copy_from_slice(value);
        self.pool.close(t)?;
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<u64, KvsError> {
        Ok(self.pool.checkpoint()?)
    }

    fn cost(&self) -> CostMeter {
        self.pool.cost()
    }

    fn reset_cost(&mut self) {
        self.pool.reset_cost()
    }

    fn metadata_bytes(&self) -> usize {
        self.pool.metadata_bytes()
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}
