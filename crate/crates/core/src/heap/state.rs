use super::{
    cache_footprint, payload_charge, CacheBuf, HeapConfig, HeapError, HeapStats, ObjectHandle,
    ObjectMeta, Result, HEADER_CHARGE, RESIDENT_META_BYTES,
};
use crate::extent::{Extent, ExtentAllocator};
use crate::persistence::{encode_entry, NvmLayout, ENTRY_BYTES, ENTRY_FLAGS_OFFSET};
use crate::storage::{words_for, StorageDevice};

/// Volatile record for one live object.
#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub id: u32,
    pub size: usize,
    pub nvm: Extent,
    /// Footprint in the cache; `Some` iff resident. The payload starts at
    /// `cache.offset`.
    pub cache: Option<Extent>,
    pub modified: bool,
    pub readers: u32,
    pub writer: bool,
    /// The object-table entry has not been written to NVM yet.
    pub entry_dirty: bool,
    /// A live table entry for this object exists on NVM.
    pub entry_on_nvm: bool,
}

impl Slot {
    pub fn pinned(&self) -> bool {
        self.readers > 0 || self.writer
    }

    pub fn resident(&self) -> bool {
        self.cache.is_some()
    }

    fn dirty_charge(&self) -> usize {
        let mut charge = 0;
        if self.resident() {
            charge += RESIDENT_META_BYTES;
        }
        if self.modified {
            charge += payload_charge(self.size);
        }
        if self.entry_dirty {
            charge += ENTRY_BYTES;
        }
        charge
    }
}

/// Steps that free dirty budget, in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Relief {
    Sync(usize),
    Flush(usize),
}

#[derive(Debug, Default)]
pub(crate) struct ReliefPlan(pub Vec<Relief>);

impl ReliefPlan {
    pub fn objects(&self) -> Vec<usize> {
        self.0
            .iter()
            .filter_map(|r| match r {
                Relief::Sync(i) => Some(*i),
                Relief::Flush(_) => None,
            })
            .collect()
    }
}

/// Where the last committed checkpoint lives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct CheckpointCursor {
    pub sequence: u32,
    pub active_slot: Option<u8>,
}

/// All volatile heap bookkeeping except the device itself.
#[derive(Debug)]
pub(crate) struct HeapCore {
    pub config: HeapConfig,
    pub layout: NvmLayout,
    pub heap_id: u32,
    pub slots: Vec<Option<Slot>>,
    /// Resident list in arrival order.
    pub resident: Vec<u32>,
    pub cache_alloc: ExtentAllocator,
    pub nvm_alloc: ExtentAllocator,
    pub next_id: u32,
    pub dirty: usize,
    pub checkpoint: CheckpointCursor,
}

impl HeapCore {
    pub fn empty(config: HeapConfig, layout: NvmLayout, heap_id: u32) -> Self {
        HeapCore {
            config,
            layout,
            heap_id,
            slots: vec![None; layout.table_capacity],
            resident: Vec::new(),
            cache_alloc: ExtentAllocator::new(0, config.cache_size_bytes),
            nvm_alloc: ExtentAllocator::new(layout.object_region.offset, layout.object_region.len),
            next_id: 1,
            dirty: HEADER_CHARGE,
            checkpoint: CheckpointCursor::default(),
        }
    }

    pub fn limit(&self) -> usize {
        self.config.max_modified_state_bytes
    }

    pub fn lookup(&self, handle: &ObjectHandle) -> Result<usize> {
        if handle.heap != self.heap_id {
            return Err(HeapError::ForeignHandle);
        }
        let index = handle.index as usize;
        match self.slots.get(index) {
            Some(Some(slot)) if slot.id == handle.id => Ok(index),
            _ => Err(HeapError::InvalidHandle),
        }
    }

    pub fn slot(&self, index: usize) -> &Slot {
        self.slots[index].as_ref().expect("live slot")
    }

    pub fn slot_mut(&mut self, index: usize) -> &mut Slot {
        self.slots[index].as_mut().expect("live slot")
    }

    pub fn handle(&self, index: usize) -> ObjectHandle {
        let slot = self.slot(index);
        ObjectHandle {
            heap: self.heap_id,
            index: index as u32,
            id: slot.id,
            size: slot.size as u32,
        }
    }

    pub fn live_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|_| i))
    }

    pub fn meta(&self, index: usize) -> ObjectMeta {
        let s = self.slot(index);
        ObjectMeta {
            nvm_offset: s.nvm.offset,
            size_bytes: s.size,
            resident: s.resident(),
            pinned: s.pinned(),
            modified: s.modified,
            cache_offset: s.cache.map(|c| c.offset),
            readers: s.readers,
            writer: s.writer,
            entry_unflushed: s.entry_dirty,
        }
    }

    pub fn recompute_dirty(&self) -> usize {
        HEADER_CHARGE
            + self
                .slots
                .iter()
                .flatten()
                .map(Slot::dirty_charge)
                .sum::<usize>()
    }

    pub fn stats(&self) -> HeapStats {
        let mut stats = HeapStats {
            dirty_bytes: self.dirty,
            cache_free_bytes: self.cache_alloc.free_bytes(),
            nvm_free_bytes: self.nvm_alloc.free_bytes(),
            ..HeapStats::default()
        };
        for s in self.slots.iter().flatten() {
            stats.object_count += 1;
            if s.resident() {
                stats.resident_count += 1;
                stats.resident_bytes += s.size;
            }
            if s.modified {
                stats.modified_bytes += s.size;
            }
            if s.pinned() {
                stats.pinned_count += 1;
            }
            if s.entry_dirty {
                stats.unflushed_entries += 1;
            }
        }
        stats
    }

    /// Oldest unpinned residents whose removal opens a cache hole of
    /// `footprint` bytes. Empty when the hole already exists.
    pub fn plan_cache_victims(&self, footprint: usize) -> Option<Vec<usize>> {
        let mut trial = self.cache_alloc.clone();
        let mut victims = Vec::new();
        if trial.largest_free() >= footprint {
            return Some(victims);
        }
        for &index in &self.resident {
            let slot = self.slot(index as usize);
            if slot.pinned() {
                continue;
            }
            trial.free(slot.cache.expect("resident"));
            victims.push(index as usize);
            if trial.largest_free() >= footprint {
                return Some(victims);
            }
        }
        None
    }

    /// Syncs unpinned modified residents oldest first, then flushes
    /// table entries, until `extra` more dirty bytes fit under the limit.
    pub fn plan_dirty_relief(&self, extra: usize, exclude: Option<usize>) -> Option<ReliefPlan> {
        let limit = self.limit();
        let mut dirty = self.dirty + extra;
        let mut plan = ReliefPlan::default();
        if dirty <= limit {
            return Some(plan);
        }
        for &index in &self.resident {
            let index = index as usize;
            let slot = self.slot(index);
            if Some(index) == exclude || !slot.modified || slot.pinned() {
                continue;
            }
            dirty -= payload_charge(slot.size);
            plan.0.push(Relief::Sync(index));
            if dirty <= limit {
                return Some(plan);
            }
        }
        for index in self.live_indices() {
            if self.slot(index).entry_dirty {
                dirty -= ENTRY_BYTES;
                plan.0.push(Relief::Flush(index));
                if dirty <= limit {
                    return Some(plan);
                }
            }
        }
        None
    }

    /// Dirty bytes that could be shed without touching `exclude` or any
    /// pinned object, counting residents that would be unloaded too.
    fn reclaimable_dirty(&self, exclude: Option<usize>) -> usize {
        self.live_indices()
            .filter(|&i| Some(i) != exclude)
            .map(|i| {
                let s = self.slot(i);
                let mut r = 0;
                if s.modified && !s.pinned() {
                    r += payload_charge(s.size);
                }
                if s.entry_dirty {
                    r += ENTRY_BYTES;
                }
                r
            })
            .sum()
    }
}

/// The device plus its bookkeeping; all mutating heap logic lives here.
pub(crate) struct HeapState<S> {
    pub storage: S,
    pub core: HeapCore,
}

impl<S: StorageDevice> HeapState<S> {
    fn check_dirty(&self) {
        debug_assert_eq!(self.core.dirty, self.core.recompute_dirty());
        debug_assert!(self.core.dirty <= self.core.limit());
    }

    pub fn alloc(&mut self, cache: &CacheBuf, payload: &[u8]) -> Result<usize> {
        let size = payload.len();
        let footprint = cache_footprint(size);
        if footprint > self.core.config.cache_size_bytes || size > u32::MAX as usize {
            return Err(HeapError::ObjectTooLarge {
                size,
                cache_size: self.core.config.cache_size_bytes,
            });
        }
        let index = self
            .core
            .slots
            .iter()
            .position(Option::is_none)
            .ok_or(HeapError::OutOfNvm)?;
        let nvm = self.core.nvm_alloc.alloc(size).ok_or(HeapError::OutOfNvm)?;

        if let Err(e) = self.make_cache_room(cache, footprint) {
            self.core.nvm_alloc.free(nvm);
            return Err(e);
        }

        let full = payload_charge(size) + RESIDENT_META_BYTES + ENTRY_BYTES;
        let write_through = match self.core.plan_dirty_relief(full, None) {
            Some(plan) => {
                if let Err(e) = self.apply_relief(cache, &plan) {
                    self.core.nvm_alloc.free(nvm);
                    return Err(e);
                }
                false
            }
            None => match self.core.plan_dirty_relief(RESIDENT_META_BYTES, None) {
                Some(plan) => {
                    if let Err(e) = self.apply_relief(cache, &plan) {
                        self.core.nvm_alloc.free(nvm);
                        return Err(e);
                    }
                    true
                }
                None => {
                    self.core.nvm_alloc.free(nvm);
                    return Err(HeapError::DirtyBudgetUnsatisfiable {
                        needed: full,
                        limit: self.core.limit(),
                    });
                }
            },
        };

        let id = self.core.next_id;
        if write_through {
            let entry = encode_entry(id, nvm.offset, size, true);
            let written = self
                .storage
                .write(nvm.offset, payload)
                .and_then(|_| self.storage.write(self.core.layout.entry_offset(index), &entry));
            if let Err(e) = written {
                self.core.nvm_alloc.free(nvm);
                return Err(e.into());
            }
        }

        let extent = self
            .core
            .cache_alloc
            .alloc(footprint)
            .expect("cache room was made");
        cache.copy_in(extent.offset, payload);
        self.core.next_id = id.wrapping_add(1).max(1);
        self.core.slots[index] = Some(Slot {
            id,
            size,
            nvm,
            cache: Some(extent),
            modified: !write_through,
            readers: 0,
            writer: false,
            entry_dirty: !write_through,
            entry_on_nvm: write_through,
        });
        self.core.resident.push(index as u32);
        self.core.dirty += if write_through { RESIDENT_META_BYTES } else { full };
        self.check_dirty();
        Ok(index)
    }

    pub fn dealloc(&mut self, index: usize) -> Result<()> {
        let slot = self.core.slot(index);
        if slot.pinned() {
            return Err(HeapError::StillPinned);
        }
        if slot.entry_on_nvm {
            // tombstone: clear the live flag word
            let at = self.core.layout.entry_offset(index) + ENTRY_FLAGS_OFFSET;
            self.storage.write(at, &[0; 4])?;
        }
        let slot = self.core.slots[index].take().expect("live slot");
        self.core.dirty -= slot.dirty_charge();
        if let Some(extent) = slot.cache {
            self.core.cache_alloc.free(extent);
            self.core.resident.retain(|&i| i as usize != index);
        }
        self.core.nvm_alloc.free(slot.nvm);
        self.check_dirty();
        Ok(())
    }

    /// Makes the object resident and adds a reader pin. Returns its cache offset.
    pub fn pin_read(&mut self, cache: &CacheBuf, index: usize) -> Result<usize> {
        if self.core.slot(index).writer {
            return Err(HeapError::WriteGuardActive);
        }
        if !self.core.slot(index).resident() {
            self.load(cache, index)?;
        }
        let slot = self.core.slot_mut(index);
        slot.readers += 1;
        Ok(slot.cache.expect("resident").offset)
    }

    /// Makes the object resident, pinned and modified, keeping the dirty
    /// budget. Returns its cache offset.
    pub fn pin_write(&mut self, cache: &CacheBuf, index: usize) -> Result<usize> {
        let slot = self.core.slot(index);
        if slot.pinned() {
            return Err(HeapError::GuardActive);
        }
        let charge = payload_charge(slot.size);
        if !slot.modified {
            // infeasible no matter what else gets synced
            let floor = HEADER_CHARGE + RESIDENT_META_BYTES + charge;
            let others = self.core.dirty - self.core.reclaimable_dirty(Some(index));
            let own_resident = if slot.resident() { 0 } else { RESIDENT_META_BYTES };
            if floor > self.core.limit() || others + own_resident + charge > self.core.limit() {
                // others includes pinned modified objects that cannot be synced
                return Err(HeapError::DirtyBudgetUnsatisfiable {
                    needed: charge,
                    limit: self.core.limit(),
                });
            }
        }
        if !self.core.slot(index).resident() {
            self.load(cache, index)?;
        }
        self.core.slot_mut(index).writer = true;
        if !self.core.slot(index).modified {
            let plan = match self.core.plan_dirty_relief(charge, Some(index)) {
                Some(plan) => plan,
                None => {
                    self.core.slot_mut(index).writer = false;
                    return Err(HeapError::DirtyBudgetUnsatisfiable {
                        needed: charge,
                        limit: self.core.limit(),
                    });
                }
            };
            if let Err(e) = self.apply_relief(cache, &plan) {
                self.core.slot_mut(index).writer = false;
                return Err(e);
            }
            self.core.slot_mut(index).modified = true;
            self.core.dirty += charge;
        }
        self.check_dirty();
        Ok(self.core.slot(index).cache.expect("resident").offset)
    }

    /// Brings a swapped-out object into the cache, evicting as needed.
    fn load(&mut self, cache: &CacheBuf, index: usize) -> Result<()> {
        let (size, nvm) = {
            let s = self.core.slot(index);
            debug_assert!(!s.resident());
            (s.size, s.nvm)
        };
        let footprint = cache_footprint(size);
        self.make_cache_room(cache, footprint)?;
        let plan = self
            .core
            .plan_dirty_relief(RESIDENT_META_BYTES, Some(index))
            .ok_or(HeapError::DirtyBudgetUnsatisfiable {
                needed: RESIDENT_META_BYTES,
                limit: self.core.limit(),
            })?;
        self.apply_relief(cache, &plan)?;
        let mut buf = vec![0; size];
        self.storage.read(nvm.offset, &mut buf)?;
        let extent = self
            .core
            .cache_alloc
            .alloc(footprint)
            .expect("cache room was made");
        cache.copy_in(extent.offset, &buf);
        self.core.slot_mut(index).cache = Some(extent);
        self.core.resident.push(index as u32);
        self.core.dirty += RESIDENT_META_BYTES;
        self.check_dirty();
        Ok(())
    }

    fn make_cache_room(&mut self, cache: &CacheBuf, footprint: usize) -> Result<()> {
        let victims = self
            .core
            .plan_cache_victims(footprint)
            .ok_or(HeapError::CachePressureUnresolvable { needed: footprint })?;
        for index in victims {
            if self.core.slot(index).modified {
                self.sync(cache, index)?;
            }
            self.unload(index)?;
        }
        Ok(())
    }

    pub fn apply_relief(&mut self, cache: &CacheBuf, plan: &ReliefPlan) -> Result<()> {
        for step in &plan.0 {
            match *step {
                Relief::Sync(index) => {
                    self.sync(cache, index)?;
                }
                Relief::Flush(index) => self.flush_entry(index)?,
            }
        }
        Ok(())
    }

    /// Writes the cached payload to NVM without touching any flag.
    pub fn write_back(&mut self, cache: &CacheBuf, index: usize) -> Result<u64> {
        let slot = self.core.slot(index);
        let extent = slot.cache.ok_or(HeapError::NotResident)?;
        let mut buf = vec![0; slot.size];
        cache.copy_out(extent.offset, &mut buf);
        self.storage.write(slot.nvm.offset, &buf)?;
        Ok(words_for(buf.len()))
    }

    pub fn sync(&mut self, cache: &CacheBuf, index: usize) -> Result<u64> {
        if !self.core.slot(index).modified {
            return Err(HeapError::NotModified);
        }
        let words = self.write_back(cache, index)?;
        let slot = self.core.slot_mut(index);
        slot.modified = false;
        let charge = payload_charge(slot.size);
        self.core.dirty -= charge;
        Ok(words)
    }

    pub fn unload(&mut self, index: usize) -> Result<()> {
        let slot = self.core.slot(index);
        let extent = slot.cache.ok_or(HeapError::NotResident)?;
        if slot.pinned() {
            return Err(HeapError::StillPinned);
        }
        if slot.modified {
            return Err(HeapError::Modified);
        }
        self.core.cache_alloc.free(extent);
        self.core.resident.retain(|&i| i as usize != index);
        self.core.slot_mut(index).cache = None;
        self.core.dirty -= RESIDENT_META_BYTES;
        Ok(())
    }

    pub fn flush_entry(&mut self, index: usize) -> Result<()> {
        let slot = self.core.slot(index);
        debug_assert!(slot.entry_dirty);
        let entry = encode_entry(slot.id, slot.nvm.offset, slot.size, true);
        self.storage
            .write(self.core.layout.entry_offset(index), &entry)?;
        let slot = self.core.slot_mut(index);
        slot.entry_dirty = false;
        slot.entry_on_nvm = true;
        self.core.dirty -= ENTRY_BYTES;
        Ok(())
    }
}
