//! Bounded checkpointing: the NVM image layout, `persist`, `restore` and the
//! analytic transfer bound.
//!
//! # Image layout
//!
//! ```text
//! [0, 24)            superblock
//!   0   magic "VNVH"
//!   4   version u16 | active slot u8 | commit u8      (the commit word)
//!   8   slot A offset u32, 12 slot A length u32
//!   16  slot B offset u32, 20 slot B length u32
//! slot A, slot B     checkpoint header (24 B) + 3-byte resident records
//! table              heap id u32, then 20-byte entries
//! object region      payload extents
//! ```
//!
//! Table entries are `id u32, nvm_offset u32, size u32, flags u8, pad u8 x3,
//! cache_offset u32`, all little-endian. Flag bit 1 marks a live entry; bit 0
//! (pinned at persist) and `cache_offset` are carried by the resident
//! records instead and are written as zero.
//!
//! A resident record packs `pinned << 23 | index << offset_bits | word` where
//! `word` is the cache offset in words.
//!
//! Persist writes back modified payloads and dirty table entries, then the
//! inactive slot, its length word and finally the commit word. A failure
//! anywhere before the commit word leaves the previous slot active.

use crate::extent::{align_up, Extent};
use crate::heap::{
    cache_footprint, payload_charge, CacheBuf, CheckpointCursor, HeapConfig, HeapCore, HeapError,
    HeapState, Result, Slot, VnvHeap, HEADER_CHARGE, RESIDENT_META_BYTES,
};
use crate::storage::{words_for, StorageDevice};

pub const MAGIC: [u8; 4] = *b"VNVH";
pub const VERSION: u16 = 1;
pub const SUPERBLOCK_BYTES: usize = 24;
pub const CHECKPOINT_HEADER_BYTES: usize = 24;
pub const ENTRY_BYTES: usize = 20;
pub const ENTRY_FLAGS_OFFSET: usize = 12;
pub const TABLE_HEADER_BYTES: usize = 4;
pub const RECORD_BYTES: usize = 3;

const COMMIT_WORD: usize = 4;
const FLAG_PINNED: u8 = 1;
const FLAG_LIVE: u8 = 2;
const RECORD_BITS: u32 = 23;

/// Bytes written by every persist on top of the dirty state: the checkpoint
/// header, the slot length word and the commit word.
pub const PERSIST_FIXED_BYTES: usize = CHECKPOINT_HEADER_BYTES + 8;

/// Where everything lives on the device for one heap configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NvmLayout {
    pub slot_offsets: [usize; 2],
    pub slot_capacity: usize,
    pub table_offset: usize,
    pub table_capacity: usize,
    pub object_region: Extent,
    pub offset_bits: u32,
    pub index_bits: u32,
}

fn bits_for(max_value: usize) -> u32 {
    usize::BITS - max_value.leading_zeros()
}

impl NvmLayout {
    pub fn new(config: &HeapConfig, capacity: usize) -> Result<Self> {
        let cache_words = config.cache_size_bytes / 4;
        let offset_bits = bits_for(cache_words.saturating_sub(1)).max(1);
        if offset_bits >= RECORD_BITS {
            return Err(HeapError::ConfigInvalid(format!(
                "cache of {} bytes is too large for 3-byte resident records",
                config.cache_size_bytes
            )));
        }
        let index_bits = RECORD_BITS - offset_bits;
        let table_capacity = config.max_objects.min(1 << index_bits);
        let slot_capacity = align_up(CHECKPOINT_HEADER_BYTES + RECORD_BYTES * cache_words);
        let slot_a = SUPERBLOCK_BYTES;
        let slot_b = slot_a + slot_capacity;
        let table_offset = slot_b + slot_capacity;
        let objects = table_offset + TABLE_HEADER_BYTES + ENTRY_BYTES * table_capacity;
        if objects + 4 > capacity || capacity > u32::MAX as usize {
            return Err(HeapError::ConfigInvalid(format!(
                "device of {capacity} bytes cannot hold the heap layout ({objects} bytes of metadata)"
            )));
        }
        Ok(NvmLayout {
            slot_offsets: [slot_a, slot_b],
            slot_capacity,
            table_offset,
            table_capacity,
            object_region: Extent {
                offset: objects,
                len: capacity - objects,
            },
            offset_bits,
            index_bits,
        })
    }

    pub fn entry_offset(&self, index: usize) -> usize {
        debug_assert!(index < self.table_capacity);
        self.table_offset + TABLE_HEADER_BYTES + index * ENTRY_BYTES
    }

    /// Writes an uncommitted superblock, the table header and an empty table.
    pub fn format<S: StorageDevice>(&self, storage: &mut S, heap_id: u32) -> Result<()> {
        storage.write(0, &self.superblock(0, false))?;
        let mut table = vec![0u8; TABLE_HEADER_BYTES + ENTRY_BYTES * self.table_capacity];
        table[..4].copy_from_slice(&heap_id.to_le_bytes());
        storage.write(self.table_offset, &table)?;
        Ok(())
    }

    fn superblock(&self, active: u8, commit: bool) -> [u8; SUPERBLOCK_BYTES] {
        let mut sb = [0u8; SUPERBLOCK_BYTES];
        sb[..4].copy_from_slice(&MAGIC);
        sb[4..8].copy_from_slice(&commit_word(active, commit));
        put_u32(&mut sb, 8, self.slot_offsets[0]);
        put_u32(&mut sb, 16, self.slot_offsets[1]);
        sb
    }

    pub fn pack_record(&self, pinned: bool, index: usize, cache_offset: usize) -> [u8; 3] {
        let word = cache_offset / 4;
        debug_assert!(word < 1 << self.offset_bits && index < 1 << self.index_bits);
        let packed = (u32::from(pinned) << RECORD_BITS)
            | ((index as u32) << self.offset_bits)
            | word as u32;
        let b = packed.to_le_bytes();
        [b[0], b[1], b[2]]
    }

    /// Returns `(pinned, index, cache_offset)`.
    pub fn unpack_record(&self, bytes: [u8; 3]) -> (bool, usize, usize) {
        let packed = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], 0]);
        let pinned = packed >> RECORD_BITS & 1 == 1;
        let index = (packed & ((1 << RECORD_BITS) - 1)) >> self.offset_bits;
        let word = packed & ((1 << self.offset_bits) - 1);
        (pinned, index as usize, word as usize * 4)
    }
}

fn commit_word(active: u8, commit: bool) -> [u8; 4] {
    let v = VERSION.to_le_bytes();
    [v[0], v[1], active, u8::from(commit)]
}

fn put_u32(buf: &mut [u8], at: usize, v: usize) {
    buf[at..at + 4].copy_from_slice(&(v as u32).to_le_bytes());
}

fn get_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

/// One object-table entry as stored on NVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub id: u32,
    pub nvm_offset: usize,
    pub size: usize,
    pub flags: u8,
    pub cache_offset: usize,
}

impl TableEntry {
    pub fn live(&self) -> bool {
        self.flags & FLAG_LIVE != 0
    }

    pub fn pinned(&self) -> bool {
        self.flags & FLAG_PINNED != 0
    }
}

pub fn encode_entry(id: u32, nvm_offset: usize, size: usize, live: bool) -> [u8; ENTRY_BYTES] {
    let mut e = [0u8; ENTRY_BYTES];
    e[..4].copy_from_slice(&id.to_le_bytes());
    put_u32(&mut e, 4, nvm_offset);
    put_u32(&mut e, 8, size);
    e[ENTRY_FLAGS_OFFSET] = if live { FLAG_LIVE } else { 0 };
    e
}

pub fn decode_entry(e: &[u8]) -> TableEntry {
    TableEntry {
        id: get_u32(e, 0),
        nvm_offset: get_u32(e, 4) as usize,
        size: get_u32(e, 8) as usize,
        flags: e[ENTRY_FLAGS_OFFSET],
        cache_offset: get_u32(e, 16) as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CheckpointHeader {
    sequence: u32,
    records: u32,
    cache_size: u32,
    dirty_limit: u32,
    table_capacity: u32,
    crc: u32,
}

impl CheckpointHeader {
    fn encode(&self) -> [u8; CHECKPOINT_HEADER_BYTES] {
        let mut h = [0u8; CHECKPOINT_HEADER_BYTES];
        let fields = [
            self.sequence,
            self.records,
            self.cache_size,
            self.dirty_limit,
            self.table_capacity,
            self.crc,
        ];
        for (i, f) in fields.iter().enumerate() {
            h[i * 4..i * 4 + 4].copy_from_slice(&f.to_le_bytes());
        }
        h
    }

    fn decode(h: &[u8]) -> Self {
        CheckpointHeader {
            sequence: get_u32(h, 0),
            records: get_u32(h, 4),
            cache_size: get_u32(h, 8),
            dirty_limit: get_u32(h, 12),
            table_capacity: get_u32(h, 16),
            crc: get_u32(h, 20),
        }
    }
}

/// CRC over the header (with its crc field zeroed) and the records.
fn checkpoint_crc(header: &[u8], records: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&header[..CHECKPOINT_HEADER_BYTES - 4]);
    hasher.update(&[0; 4]);
    hasher.update(records);
    hasher.finalize()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PersistReport {
    pub words_transferred: u64,
    pub objects_synced: usize,
    pub entries_flushed: usize,
    pub metadata_bytes_written: usize,
}

/// Worst-case words a persist may transfer under `config`.
pub fn persist_bound(config: &HeapConfig) -> u64 {
    words_for(config.max_modified_state_bytes + HEADER_CHARGE)
}

/// Maps word counts to time and energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub power_mw: f64,
    pub word_latency_us: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            power_mw: 132.0,
            word_latency_us: 1.0,
        }
    }
}

impl EnergyModel {
    pub fn time_us(&self, words: u64) -> f64 {
        words as f64 * self.word_latency_us
    }

    pub fn energy_uj(&self, words: u64) -> f64 {
        self.time_us(words) * self.power_mw / 1000.0
    }
}

/// Worst-case energy in millijoules for `words` transfers.
pub fn wcec(words: u64, model: &EnergyModel) -> f64 {
    model.energy_uj(words) / 1000.0
}

impl<S: StorageDevice> HeapState<S> {
    fn persist(&mut self, cache: &CacheBuf) -> Result<PersistReport> {
        let start = self.storage.meter();
        let mut report = PersistReport::default();

        let order: Vec<usize> = self.core.resident.iter().map(|&i| i as usize).collect();
        for &index in &order {
            let slot = self.core.slot(index);
            if !slot.modified {
                continue;
            }
            if slot.writer {
                // the application may still write through its guard
                self.write_back(cache, index)?;
            } else {
                self.sync(cache, index)?;
            }
            report.objects_synced += 1;
        }

        let dirty_entries: Vec<usize> = self
            .core
            .live_indices()
            .filter(|&i| self.core.slot(i).entry_dirty)
            .collect();
        for index in dirty_entries {
            self.flush_entry(index)?;
            report.entries_flushed += 1;
        }

        let layout = self.core.layout;
        let mut records = Vec::with_capacity(order.len() * RECORD_BYTES);
        for &index in &order {
            let slot = self.core.slot(index);
            let offset = slot.cache.expect("resident").offset;
            records.extend_from_slice(&layout.pack_record(slot.pinned(), index, offset));
        }
        let target = match self.core.checkpoint.active_slot {
            Some(active) => 1 - active,
            None => 0,
        };
        let sequence = self.core.checkpoint.sequence.wrapping_add(1);
        let mut header = CheckpointHeader {
            sequence,
            records: order.len() as u32,
            cache_size: self.core.config.cache_size_bytes as u32,
            dirty_limit: self.core.config.max_modified_state_bytes as u32,
            table_capacity: layout.table_capacity as u32,
            crc: 0,
        };
        header.crc = checkpoint_crc(&header.encode(), &records);
        let mut image = header.encode().to_vec();
        image.extend_from_slice(&records);
        debug_assert!(image.len() <= layout.slot_capacity);

        let slot_offset = layout.slot_offsets[target as usize];
        self.storage.write(slot_offset, &image)?;
        let len_word = 12 + 8 * target as usize;
        self.storage
            .write(len_word, &(image.len() as u32).to_le_bytes())?;
        self.storage.write(COMMIT_WORD, &commit_word(target, true))?;
        self.core.checkpoint = CheckpointCursor {
            sequence,
            active_slot: Some(target),
        };

        report.metadata_bytes_written =
            image.len() + 8 + report.entries_flushed * ENTRY_BYTES;
        report.words_transferred = self.storage.meter().since(&start).total();
        Ok(report)
    }
}

/// Bookkeeping rebuilt from a committed checkpoint, before any payload is
/// copied into a cache.
struct Recovered {
    core: HeapCore,
    /// Pinned residents to reload: (index, payload offset in cache).
    pinned: Vec<(usize, usize)>,
}

fn no_checkpoint(msg: impl Into<String>) -> HeapError {
    HeapError::NoValidCheckpoint(msg.into())
}

fn recover<S: StorageDevice>(storage: &mut S) -> Result<Recovered> {
    let capacity = storage.capacity();
    if capacity < SUPERBLOCK_BYTES {
        return Err(no_checkpoint("device smaller than a superblock"));
    }
    let sb = storage.read_vec(0, SUPERBLOCK_BYTES)?;
    if sb[..4] != MAGIC {
        return Err(no_checkpoint("bad magic"));
    }
    if u16::from_le_bytes([sb[4], sb[5]]) != VERSION {
        return Err(no_checkpoint("unsupported version"));
    }
    let active = sb[6];
    if sb[7] != 1 || active > 1 {
        return Err(no_checkpoint("no committed checkpoint"));
    }
    let slot_offset = get_u32(&sb, 8 + 8 * active as usize) as usize;
    let slot_len = get_u32(&sb, 12 + 8 * active as usize) as usize;
    if slot_len < CHECKPOINT_HEADER_BYTES || slot_offset + slot_len > capacity {
        return Err(no_checkpoint("active slot out of range"));
    }
    let image = storage.read_vec(slot_offset, slot_len)?;
    let header = CheckpointHeader::decode(&image);
    let records = &image[CHECKPOINT_HEADER_BYTES..];
    if records.len() != header.records as usize * RECORD_BYTES
        || checkpoint_crc(&image[..CHECKPOINT_HEADER_BYTES], records) != header.crc
    {
        return Err(no_checkpoint("checkpoint checksum mismatch"));
    }

    let config = HeapConfig::new(header.cache_size as usize, header.dirty_limit as usize)
        .with_max_objects(header.table_capacity as usize);
    config
        .validate()
        .map_err(|e| no_checkpoint(format!("stored configuration: {e}")))?;
    let layout = NvmLayout::new(&config, capacity)
        .map_err(|e| no_checkpoint(format!("stored configuration: {e}")))?;
    if layout.slot_offsets[active as usize] != slot_offset
        || layout.table_capacity != header.table_capacity as usize
    {
        return Err(no_checkpoint("layout does not match superblock"));
    }

    let table = storage.read_vec(
        layout.table_offset,
        TABLE_HEADER_BYTES + ENTRY_BYTES * layout.table_capacity,
    )?;
    let heap_id = get_u32(&table, 0);
    let mut core = HeapCore::empty(config, layout, heap_id);
    core.checkpoint = CheckpointCursor {
        sequence: header.sequence,
        active_slot: Some(active),
    };
    let mut max_id = 0;
    for (index, raw) in table[TABLE_HEADER_BYTES..]
        .chunks_exact(ENTRY_BYTES)
        .enumerate()
    {
        let entry = decode_entry(raw);
        if !entry.live() {
            continue;
        }
        let nvm = Extent {
            offset: entry.nvm_offset,
            len: align_up(entry.size.max(1)),
        };
        if entry.id == 0
            || cache_footprint(entry.size) > config.cache_size_bytes
            || !core.nvm_alloc.claim(nvm)
        {
            return Err(no_checkpoint(format!("corrupt table entry {index}")));
        }
        max_id = max_id.max(entry.id);
        core.slots[index] = Some(Slot {
            id: entry.id,
            size: entry.size,
            nvm,
            cache: None,
            modified: false,
            readers: 0,
            writer: false,
            entry_dirty: false,
            entry_on_nvm: true,
        });
    }
    core.next_id = max_id.wrapping_add(1).max(1);

    let mut pinned = Vec::new();
    for raw in records.chunks_exact(RECORD_BYTES) {
        let (is_pinned, index, offset) = layout.unpack_record([raw[0], raw[1], raw[2]]);
        if !is_pinned {
            continue;
        }
        let Some(Some(slot)) = core.slots.get(index) else {
            continue;
        };
        let extent = Extent {
            offset,
            len: cache_footprint(slot.size),
        };
        if slot.cache.is_some() || extent.end() > config.cache_size_bytes {
            continue;
        }
        if !core.cache_alloc.claim(extent) {
            continue;
        }
        core.slot_mut(index).cache = Some(extent);
        core.resident.push(index as u32);
        core.dirty += RESIDENT_META_BYTES;
        pinned.push((index, offset));
    }
    debug_assert!(core.dirty <= core.limit());
    Ok(Recovered { core, pinned })
}

impl<S: StorageDevice> VnvHeap<S> {
    /// Writes all unsynchronized state to NVM and commits a checkpoint.
    /// Live guards survive; objects under a write guard stay modified.
    pub fn persist(&self) -> Result<PersistReport> {
        self.state.borrow_mut().persist(&self.cache)
    }

    /// Rebuilds a heap from the last committed checkpoint on `storage`.
    /// Objects pinned at persist time come back resident at their recorded
    /// cache offsets; everything else stays swapped out.
    pub fn restore(mut storage: S) -> Result<Self> {
        let Recovered { core, pinned } = recover(&mut storage)?;
        let cache = CacheBuf::new(core.config.cache_size_bytes);
        for (index, offset) in pinned {
            let slot = core.slot(index);
            let buf = storage.read_vec(slot.nvm.offset, slot.size)?;
            cache.copy_in(offset, &buf);
        }
        Ok(VnvHeap {
            cache,
            state: std::cell::RefCell::new(HeapState { storage, core }),
        })
    }

    /// Models a full power cycle with the application suspended at an
    /// operation boundary: persist, lose the cache and all bookkeeping,
    /// restore. Guards alive across the call stay valid and keep their
    /// cache offsets, since their objects were pinned at persist.
    pub fn simulate_power_failure(&self) -> Result<PersistReport> {
        let report = self.persist()?;
        let mut st = self.state.borrow_mut();
        let guards: Vec<(usize, u32, bool)> = st
            .core
            .live_indices()
            .filter_map(|i| {
                let s = st.core.slot(i);
                s.pinned().then_some((i, s.readers, s.writer))
            })
            .collect();
        for e in st.core.cache_alloc.clone().free_extents() {
            self.cache.fill(e.offset, e.len, 0xA5);
        }
        for &index in &st.core.resident.clone() {
            let s = st.core.slot(index as usize);
            if !s.pinned() {
                let e = s.cache.expect("resident");
                self.cache.fill(e.offset, e.len, 0xA5);
            }
        }
        let Recovered { mut core, pinned } = recover(&mut st.storage)?;
        for (index, _) in pinned {
            // the cache still holds these bytes; charge the reload anyway
            let slot = core.slot(index);
            st.storage.read_vec(slot.nvm.offset, slot.size)?;
        }
        for (index, readers, writer) in guards {
            let s = core.slot_mut(index);
            debug_assert!(s.resident());
            s.readers = readers;
            s.writer = writer;
            if writer {
                s.modified = true;
                let charge = payload_charge(s.size);
                core.dirty += charge;
            }
        }
        debug_assert_eq!(core.dirty, core.recompute_dirty());
        st.core = core;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::SimulatedNvm;

    fn heap(cache: usize, limit: usize) -> VnvHeap<SimulatedNvm> {
        VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(cache, limit)).unwrap()
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(persist_bound(&HeapConfig::new(4096, 2048)), 516);
        assert_eq!(
            persist_bound(&HeapConfig::new(4096, 2048)),
            persist_bound(&HeapConfig::new(32768, 2048))
        );
        assert_eq!(persist_bound(&HeapConfig::new(4096, 19)), 9);
    }

    #[test]
    fn wcec_arithmetic() {
        let m = EnergyModel::default();
        assert_eq!(wcec(0, &m), 0.0);
        assert!((wcec(516, &m) - 0.068112).abs() < 1e-9);
        assert!((wcec(1032, &m) - 2.0 * wcec(516, &m)).abs() < 1e-12);
        let slower = EnergyModel {
            word_latency_us: 2.0,
            ..m
        };
        assert!(wcec(10, &slower) > wcec(10, &m));
    }

    #[test]
    fn superblock_is_bit_exact() {
        let h = heap(4096, 2048);
        h.persist().unwrap();
        let nvm = h.into_storage();
        let sb = &nvm.image()[..24];
        assert_eq!(&sb[..4], b"VNVH");
        assert_eq!(u16::from_le_bytes([sb[4], sb[5]]), 1);
        assert_eq!(sb[6], 0);
        assert_eq!(sb[7], 1);
        assert_eq!(get_u32(sb, 8), 24);
        assert_eq!(get_u32(sb, 12), 24);
        assert_eq!(get_u32(sb, 16) as usize, 24 + align_up(24 + 3 * 1024));
        assert_eq!(get_u32(sb, 20), 0);
    }

    #[test]
    fn entry_round_trip() {
        let raw = encode_entry(7, 4096, 33, true);
        let e = decode_entry(&raw);
        assert_eq!((e.id, e.nvm_offset, e.size), (7, 4096, 33));
        assert!(e.live() && !e.pinned());
        assert_eq!(e.cache_offset, 0);
        assert!(!decode_entry(&encode_entry(7, 4096, 33, false)).live());
    }

    #[test]
    fn record_packing() {
        let layout = NvmLayout::new(&HeapConfig::new(60416, 11878), 512 * 1024).unwrap();
        assert_eq!((layout.offset_bits, layout.index_bits), (14, 9));
        for (pinned, index, offset) in [(true, 511, 60412), (false, 0, 0), (true, 3, 1024)] {
            let r = layout.pack_record(pinned, index, offset);
            assert_eq!(layout.unpack_record(r), (pinned, index, offset));
        }
    }

    #[test]
    fn oversized_cache_rejected() {
        let cfg = HeapConfig::new(1 << 25, 2048);
        assert!(matches!(
            NvmLayout::new(&cfg, usize::MAX >> 8),
            Err(HeapError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn empty_persist_writes_metadata_only() {
        let h = heap(4096, 2048);
        h.reset_cost();
        let r = h.persist().unwrap();
        assert_eq!(r.objects_synced, 0);
        assert_eq!(r.words_transferred, 8);
        assert_eq!(h.cost().words_read, 0);
    }

    #[test]
    fn restore_blank_device_fails() {
        assert!(matches!(
            VnvHeap::restore(SimulatedNvm::default()),
            Err(HeapError::NoValidCheckpoint(_))
        ));
        let h = heap(4096, 2048);
        assert!(matches!(
            VnvHeap::restore(h.into_storage()),
            Err(HeapError::NoValidCheckpoint(_))
        ));
    }

    #[test]
    fn round_trip_preserves_payloads() {
        let h = heap(4096, 2048);
        let a = h.alloc(&[1; 100]).unwrap();
        let b = h.alloc(&[2; 7]).unwrap();
        h.get_mut(a).unwrap()[5] = 9;
        h.persist().unwrap();
        let mut nvm = h.into_storage();
        nvm.reboot();
        let h = VnvHeap::restore(nvm).unwrap();
        let mut want = [1; 100];
        want[5] = 9;
        assert_eq!(&*h.get_ref(a).unwrap(), &want[..]);
        assert_eq!(&*h.get_ref(b).unwrap(), &[2; 7]);
        assert_eq!(h.stats().dirty_bytes, HEADER_CHARGE + 2 * RESIDENT_META_BYTES);
    }

    #[test]
    fn pinned_objects_restore_at_same_offsets() {
        let h = heap(4096, 2048);
        let hs: Vec<_> = (0..6u8).map(|i| h.alloc(&[i; 40]).unwrap()).collect();
        let offsets: Vec<_> = {
            let g0 = h.get_ref(hs[1]).unwrap();
            let g1 = h.get_ref(hs[3]).unwrap();
            let g2 = h.get_mut(hs[4]).unwrap();
            let o = vec![g0.cache_offset(), g1.cache_offset(), g2.cache_offset()];
            h.persist().unwrap();
            o
        };
        let h = VnvHeap::restore(h.into_storage()).unwrap();
        let resident: Vec<_> = h.resident_order();
        assert_eq!(resident, vec![hs[1], hs[3], hs[4]]);
        for (h_, off) in [hs[1], hs[3], hs[4]].iter().zip(offsets) {
            assert_eq!(h.meta(*h_).unwrap().cache_offset, Some(off));
        }
        assert_eq!(h.stats().dirty_bytes, HEADER_CHARGE + 3 * RESIDENT_META_BYTES);
        assert_eq!(&*h.get_ref(hs[5]).unwrap(), &[5; 40]);
    }

    #[test]
    fn saturated_persist_hits_bound_exactly() {
        let cfg = HeapConfig::new(4096, 2048);
        let h = VnvHeap::init(SimulatedNvm::default(), cfg).unwrap();
        let hs: Vec<_> = [504, 504, 504, 508]
            .iter()
            .map(|&n| h.alloc(&vec![1; n]).unwrap())
            .collect();
        h.persist().unwrap();
        for &x in &hs {
            h.get_mut(x).unwrap();
        }
        assert_eq!(h.stats().dirty_bytes, 2048);
        let r = h.persist().unwrap();
        assert_eq!(r.words_transferred, persist_bound(&cfg));
    }

    #[test]
    fn power_failure_keeps_guards_valid() {
        let h = heap(4096, 2048);
        let a = h.alloc(&[3; 64]).unwrap();
        let b = h.alloc(&[4; 64]).unwrap();
        let mut w = h.get_mut(a).unwrap();
        w[0] = 42;
        let off = w.cache_offset();
        h.simulate_power_failure().unwrap();
        assert_eq!(w.cache_offset(), off);
        assert_eq!(w[0], 42);
        w[1] = 43;
        drop(w);
        let m = h.meta(a).unwrap();
        assert!(m.modified && m.resident && !m.pinned);
        assert!(!h.meta(b).unwrap().resident);
        assert_eq!(&*h.get_ref(b).unwrap(), &[4; 64]);
        assert_eq!(&h.get_ref(a).unwrap()[..3], &[42, 43, 3]);
        assert_eq!(h.stats().dirty_bytes, h.recompute_dirty_bytes());
    }

    #[test]
    fn failed_persist_leaves_previous_checkpoint() {
        let cfg = HeapConfig::new(4096, 2048);
        let h = VnvHeap::init(SimulatedNvm::default(), cfg).unwrap();
        let a = h.alloc(&[1; 256]).unwrap();
        h.persist().unwrap();
        h.get_mut(a).unwrap().fill(2);
        let needed = 64 + 8 + 1;
        h.with_storage(|s| s.arm_power_failure(needed - 1));
        assert!(h.persist().is_err());
        let mut nvm = h.into_storage();
        nvm.reboot();
        let h = VnvHeap::restore(nvm).unwrap();
        // the payload write completed, only the commit word was lost
        assert_eq!(&*h.get_ref(a).unwrap(), &[2; 256]);
    }
}
