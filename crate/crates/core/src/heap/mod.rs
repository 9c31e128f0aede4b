//! The virtually non-volatile heap.
//!
//! Objects live logically in NVM and are cached in a bounded volatile buffer.
//! Access goes through [`ReadGuard`] / [`WriteGuard`]; while a guard exists
//! the object is resident and pinned at a fixed cache offset. Requesting a
//! write guard marks the object modified, and the heap keeps the total of
//! unsynchronized state (modified payloads, per-resident metadata and
//! unflushed object-table entries) at or below the configured dirty limit,
//! syncing unused modified objects first when it has to.
//!
//! Guard exclusion is checked at runtime per object, in the manner of
//! `RefCell`: any number of readers or a single writer. Releasing a guard
//! consumes it, so use after release does not compile.

mod cache;
mod guard;
mod state;

use std::cell::RefCell;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

use crate::extent::align_up;
use crate::persistence::NvmLayout;
use crate::storage::{CostMeter, StorageDevice, StorageError};

pub use guard::{ReadGuard, WriteGuard};

pub(crate) use cache::CacheBuf;
pub(crate) use state::{CheckpointCursor, HeapCore, HeapState, Slot};

/// Fixed checkpoint-header bytes held in the dirty budget at all times.
pub const HEADER_CHARGE: usize = 16;

/// Metadata bytes charged per resident object.
pub const RESIDENT_META_BYTES: usize = 3;

/// Default capacity of the object table.
pub const DEFAULT_MAX_OBJECTS: usize = 1024;

/// Dirty-budget charge for a modified payload of `size` bytes (whole words).
pub const fn payload_charge(size: usize) -> usize {
    align_up(size)
}

/// Cache bytes taken by a resident object: payload plus its metadata,
/// rounded up to the cache alignment.
pub const fn cache_footprint(size: usize) -> usize {
    align_up(size + RESIDENT_META_BYTES)
}

#[derive(Debug, Error)]
pub enum HeapError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("object of {size} bytes cannot be cached in {cache_size} bytes")]
    ObjectTooLarge { size: usize, cache_size: usize },
    #[error("out of non-volatile memory")]
    OutOfNvm,
    #[error("dirty budget cannot absorb {needed} more bytes (limit {limit})")]
    DirtyBudgetUnsatisfiable { needed: usize, limit: usize },
    #[error("no unpinned residents left to make {needed} bytes of cache room")]
    CachePressureUnresolvable { needed: usize },
    #[error("object has a live write guard")]
    WriteGuardActive,
    #[error("object has a live guard")]
    GuardActive,
    #[error("object is pinned by a live guard")]
    StillPinned,
    #[error("object is not modified")]
    NotModified,
    #[error("object is not resident")]
    NotResident,
    #[error("object is modified and must be synced first")]
    Modified,
    #[error("handle does not refer to a live object")]
    InvalidHandle,
    #[error("handle belongs to another heap")]
    ForeignHandle,
    #[error("no valid checkpoint: {0}")]
    NoValidCheckpoint(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub type Result<T, E = HeapError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeapConfig {
    pub cache_size_bytes: usize,
    pub max_modified_state_bytes: usize,
    pub max_objects: usize,
}

impl HeapConfig {
    pub fn new(cache_size_bytes: usize, max_modified_state_bytes: usize) -> Self {
        HeapConfig {
            cache_size_bytes,
            max_modified_state_bytes,
            max_objects: DEFAULT_MAX_OBJECTS,
        }
    }

    pub fn with_max_objects(mut self, max_objects: usize) -> Self {
        self.max_objects = max_objects;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let HeapConfig {
            cache_size_bytes: cache,
            max_modified_state_bytes: limit,
            max_objects,
        } = *self;
        let invalid = |msg: String| Err(HeapError::ConfigInvalid(msg));
        if cache == 0 || cache % 4 != 0 {
            return invalid(format!("cache size {cache} must be a positive multiple of 4"));
        }
        if limit == 0 || limit > cache {
            return invalid(format!("dirty limit {limit} must be in 1..={cache}"));
        }
        if limit < HEADER_CHARGE + RESIDENT_META_BYTES {
            return invalid(format!(
                "dirty limit {limit} cannot hold the {HEADER_CHARGE}-byte header and one resident object"
            ));
        }
        if max_objects == 0 {
            return invalid("max_objects must be positive".into());
        }
        Ok(())
    }
}

/// Identifies one allocation within one heap. Cheap to copy; stale copies
/// are rejected with [`HeapError::InvalidHandle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectHandle {
    heap: u32,
    index: u32,
    id: u32,
    size: u32,
}

impl ObjectHandle {
    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Object-table slot of this allocation.
    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn id(&self) -> u32 {
        self.id
    }
}

/// Snapshot of one object's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectMeta {
    pub nvm_offset: usize,
    pub size_bytes: usize,
    pub resident: bool,
    pub pinned: bool,
    pub modified: bool,
    pub cache_offset: Option<usize>,
    pub readers: u32,
    pub writer: bool,
    pub entry_unflushed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeapStats {
    pub resident_bytes: usize,
    pub resident_count: usize,
    pub modified_bytes: usize,
    pub dirty_bytes: usize,
    pub pinned_count: usize,
    pub unflushed_entries: usize,
    pub object_count: usize,
    pub cache_free_bytes: usize,
    pub nvm_free_bytes: usize,
}

/// What a victim search must free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortage {
    /// A contiguous cache hole of this many bytes.
    Cache(usize),
    /// Room for this many more dirty bytes.
    Dirty(usize),
}

static NEXT_HEAP_ID: AtomicU32 = AtomicU32::new(1);

fn fresh_heap_id() -> u32 {
    // unique within the process, salted so restored heaps rarely collide
    let n = NEXT_HEAP_ID.fetch_add(1, Ordering::Relaxed);
    n ^ (rand::random::<u32>() & 0xffff_0000)
}

pub struct VnvHeap<S: StorageDevice> {
    pub(crate) cache: CacheBuf,
    pub(crate) state: RefCell<HeapState<S>>,
}

impl<S: StorageDevice> VnvHeap<S> {
    /// Formats `storage` and creates an empty heap.
    pub fn init(mut storage: S, config: HeapConfig) -> Result<Self> {
        config.validate()?;
        let layout = NvmLayout::new(&config, storage.capacity())?;
        let heap_id = fresh_heap_id();
        layout.format(&mut storage, heap_id)?;
        let core = HeapCore::empty(config, layout, heap_id);
        Ok(VnvHeap {
            cache: CacheBuf::new(config.cache_size_bytes),
            state: RefCell::new(HeapState { storage, core }),
        })
    }

    pub fn config(&self) -> HeapConfig {
        self.state.borrow().core.config
    }

    pub fn layout(&self) -> NvmLayout {
        self.state.borrow().core.layout
    }

    /// Allocates an object holding `payload`. The new object is resident and
    /// modified; when its payload alone cannot fit in the dirty budget it is
    /// written through to NVM and starts clean instead.
    pub fn alloc(&self, payload: &[u8]) -> Result<ObjectHandle> {
        let mut st = self.state.borrow_mut();
        let index = st.alloc(&self.cache, payload)?;
        Ok(st.core.handle(index))
    }

    /// Frees an object. Fails with [`HeapError::StillPinned`] while a guard
    /// for it is alive.
    pub fn dealloc(&self, handle: ObjectHandle) -> Result<()> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        st.dealloc(index)
    }

    pub fn get_ref(&self, handle: ObjectHandle) -> Result<ReadGuard<'_, S>> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        let offset = st.pin_read(&self.cache, index)?;
        Ok(ReadGuard::new(self, handle, self.cache.ptr(offset)))
    }

    pub fn get_mut(&self, handle: ObjectHandle) -> Result<WriteGuard<'_, S>> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        let offset = st.pin_write(&self.cache, index)?;
        Ok(WriteGuard::new(self, handle, self.cache.ptr(offset)))
    }

    pub(crate) fn release_read(&self, handle: &ObjectHandle) {
        let mut st = self.state.borrow_mut();
        let slot = st.core.slot_mut(handle.index as usize);
        debug_assert!(slot.readers > 0);
        slot.readers -= 1;
    }

    pub(crate) fn release_write(&self, handle: &ObjectHandle) {
        let mut st = self.state.borrow_mut();
        let slot = st.core.slot_mut(handle.index as usize);
        debug_assert!(slot.writer);
        slot.writer = false;
    }

    /// Writes a modified resident object back to NVM. Returns words written.
    pub fn sync_object(&self, handle: ObjectHandle) -> Result<u64> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        let slot = st.core.slot(index);
        if slot.cache.is_none() {
            return Err(HeapError::NotResident);
        }
        if !slot.modified {
            return Err(HeapError::NotModified);
        }
        if slot.writer {
            return Err(HeapError::StillPinned);
        }
        st.sync(&self.cache, index)
    }

    /// Drops an unpinned, unmodified object from the cache.
    pub fn unload(&self, handle: ObjectHandle) -> Result<()> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        st.unload(index)
    }

    /// Syncs (if needed) and unloads an object. Convenience for staging
    /// benchmarks and tests.
    pub fn evict(&self, handle: ObjectHandle) -> Result<()> {
        let mut st = self.state.borrow_mut();
        let index = st.core.lookup(&handle)?;
        let slot = st.core.slot(index);
        if slot.cache.is_none() {
            return Ok(());
        }
        if slot.pinned() {
            return Err(HeapError::StillPinned);
        }
        if slot.modified {
            st.sync(&self.cache, index)?;
        }
        st.unload(index)
    }

    /// Residents that would be synced and/or unloaded, oldest first, to
    /// resolve `shortage`. Pinned objects are never returned.
    pub fn choose_victims(&self, shortage: Shortage) -> Result<Vec<ObjectHandle>> {
        let st = self.state.borrow();
        let indices = match shortage {
            Shortage::Cache(bytes) => st
                .core
                .plan_cache_victims(bytes)
                .ok_or(HeapError::CachePressureUnresolvable { needed: bytes })?,
            Shortage::Dirty(bytes) => st
                .core
                .plan_dirty_relief(bytes, None)
                .ok_or(HeapError::DirtyBudgetUnsatisfiable {
                    needed: bytes,
                    limit: st.core.config.max_modified_state_bytes,
                })?
                .objects(),
        };
        Ok(indices.into_iter().map(|i| st.core.handle(i)).collect())
    }

    pub fn stats(&self) -> HeapStats {
        self.state.borrow().core.stats()
    }

    pub fn meta(&self, handle: ObjectHandle) -> Result<ObjectMeta> {
        let st = self.state.borrow();
        let index = st.core.lookup(&handle)?;
        Ok(st.core.meta(index))
    }

    /// Every live object with its bookkeeping, in table order.
    pub fn metas(&self) -> Vec<(ObjectHandle, ObjectMeta)> {
        let st = self.state.borrow();
        st.core
            .live_indices()
            .map(|i| (st.core.handle(i), st.core.meta(i)))
            .collect()
    }

    /// Live handles in table order.
    pub fn handles(&self) -> Vec<ObjectHandle> {
        let st = self.state.borrow();
        st.core.live_indices().map(|i| st.core.handle(i)).collect()
    }

    /// Resident objects in arrival order (the eviction order).
    pub fn resident_order(&self) -> Vec<ObjectHandle> {
        let st = self.state.borrow();
        st.core.resident.iter().map(|&i| st.core.handle(i as usize)).collect()
    }

    /// Dirty bytes recomputed from scratch from the object set.
    pub fn recompute_dirty_bytes(&self) -> usize {
        self.state.borrow().core.recompute_dirty()
    }

    pub fn cost(&self) -> CostMeter {
        self.state.borrow().storage.meter()
    }

    pub fn reset_cost(&self) {
        self.state.borrow_mut().storage.reset_meter()
    }

    /// Runs `f` against the underlying device.
    pub fn with_storage<R>(&self, f: impl FnOnce(&mut S) -> R) -> R {
        f(&mut self.state.borrow_mut().storage)
    }

    /// Tears the heap down, handing back the device (volatile state is lost).
    pub fn into_storage(self) -> S {
        self.state.into_inner().storage
    }
}

impl<S: StorageDevice> std::fmt::Debug for VnvHeap<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VnvHeap")
            .field("config", &self.config())
            .field("stats", &self.stats())
            .finish()
    }
}

#[cfg(test)]
mod tests;
