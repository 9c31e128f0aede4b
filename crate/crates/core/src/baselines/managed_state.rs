use std::collections::HashMap;

use thiserror::Error;

use crate::storage::{words_for, CostMeter, StorageDevice, StorageError};

/// Supported page sizes in bytes.
pub const PAGE_SIZES: [usize; 5] = [32, 64, 128, 256, 512];

/// Checkpoint header written after the page metadata.
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum MsError {
    #[error("page size {0} is not one of 32, 64, 128, 256, 512")]
    InvalidPageSize(usize),
    #[error("dirty limit of {limit} bytes leaves no room for a page after {metadata} bytes of metadata")]
    LimitTooSmall { limit: usize, metadata: usize },
    #[error("region [{offset}, {offset}+{len}) outside pool of {size} bytes")]
    OutOfRange {
        offset: usize,
        len: usize,
        size: usize,
    },
    #[error("region spans {pages} pages but at most {limit} may be dirty")]
    RegionExceedsDirtyLimit { pages: usize, limit: usize },
    #[error("open write regions pin too many dirty pages")]
    DirtyLimitUnsatisfiable,
    #[error("token is not live")]
    TokenNotLive,
    #[error("token was opened for reading")]
    ReadOnlyToken,
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
}

/// Access token returned by [`ManagedStatePool::open`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MsToken(u32);

#[derive(Debug, Clone, Copy)]
struct Open {
    offset: usize,
    len: usize,
    mode: AccessMode,
}

/// Page-granular dirty tracking over a RAM-resident data region with one
/// byte of metadata per page and no swapping.
///
/// Opening a region for writing marks its pages dirty. When that would
/// exceed the dirty-page limit, the least recently dirtied pages outside any
/// open write region are written back first.
pub struct ManagedStatePool<S> {
    storage: S,
    ram: Vec<u8>,
    page_size: usize,
    /// Stamp of the last time each page was dirtied; `None` when clean.
    dirtied: Vec<Option<u64>>,
    dirty_count: usize,
    dirty_page_limit: usize,
    clock: u64,
    tokens: HashMap<u32, Open>,
    next_token: u32,
}

impl<S: StorageDevice> ManagedStatePool<S> {
    /// A pool of `data_bytes` with at most `dirty_limit_bytes` of dirty
    /// pages plus page metadata.
    pub fn new(
        storage: S,
        data_bytes: usize,
        page_size: usize,
        dirty_limit_bytes: usize,
    ) -> Result<Self, MsError> {
        if !PAGE_SIZES.contains(&page_size) {
            return Err(MsError::InvalidPageSize(page_size));
        }
        let pages = data_bytes.div_ceil(page_size);
        let dirty_page_limit = dirty_limit_bytes.saturating_sub(pages) / page_size;
        if dirty_page_limit == 0 {
            return Err(MsError::LimitTooSmall {
                limit: dirty_limit_bytes,
                metadata: pages,
            });
        }
        let needed = data_bytes + pages + HEADER_BYTES;
        if needed > storage.capacity() {
            return Err(MsError::OutOfRange {
                offset: 0,
                len: needed,
                size: storage.capacity(),
            });
        }
        Ok(ManagedStatePool {
            storage,
            ram: vec![0; data_bytes],
            page_size,
            dirtied: vec![None; pages],
            dirty_count: 0,
            dirty_page_limit,
            clock: 0,
            tokens: HashMap::new(),
            next_token: 0,
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn page_count(&self) -> usize {
        self.dirtied.len()
    }

    pub fn data_bytes(&self) -> usize {
        self.ram.len()
    }

    pub fn dirty_page_limit(&self) -> usize {
        self.dirty_page_limit
    }

    pub fn dirty_pages(&self) -> usize {
        self.dirty_count
    }

    pub fn is_dirty(&self, page: usize) -> bool {
        self.dirtied[page].is_some()
    }

    /// Metadata bytes: one per page.
    pub fn metadata_bytes(&self) -> usize {
        self.page_count()
    }

    pub fn cost(&self) -> CostMeter {
        self.storage.meter()
    }

    pub fn reset_cost(&mut self) {
        self.storage.reset_meter()
    }

    pub fn storage(&self) -> &S {
        &self.storage
    }

    pub fn into_storage(self) -> S {
        self.storage
    }

    fn pages_of(&self, offset: usize, len: usize) -> std::ops::Range<usize> {
        if len == 0 {
            return offset / self.page_size..offset / self.page_size;
        }
        offset / self.page_size..(offset + len - 1) / self.page_size + 1
    }

    fn page_bytes(&self, page: usize) -> std::ops::Range<usize> {
        let start = page * self.page_size;
        start..(start + self.page_size).min(self.ram.len())
    }

    fn write_back(&mut self, page: usize) -> Result<(), MsError> {
        let r = self.page_bytes(page);
        self.storage.write(r.start, &self.ram[r])?;
        self.dirtied[page] = None;
        self.dirty_count -= 1;
        Ok(())
    }

    fn pinned_by_open_writes(&self, page: usize) -> bool {
        self.tokens.values().any(|o| {
            o.mode == AccessMode::Write && self.pages_of(o.offset, o.len).contains(&page)
        })
    }

    pub fn open(&mut self, offset: usize, len: usize, mode: AccessMode) -> Result<MsToken, MsError> {
        if offset + len > self.ram.len() {
            return Err(MsError::OutOfRange {
                offset,
                len,
                size: self.ram.len(),
            });
        }
        if mode == AccessMode::Write {
            let region = self.pages_of(offset, len);
            if region.len() > self.dirty_page_limit {
                return Err(MsError::RegionExceedsDirtyLimit {
                    pages: region.len(),
                    limit: self.dirty_page_limit,
                });
            }
            let new = region.clone().filter(|&p| !self.is_dirty(p)).count();
            let excess = (self.dirty_count + new).saturating_sub(self.dirty_page_limit);
            if excess > 0 {
                let mut candidates: Vec<(u64, usize)> = self
                    .dirtied
                    .iter()
                    .enumerate()
                    .filter_map(|(p, s)| s.map(|s| (s, p)))
                    .filter(|&(_, p)| !region.contains(&p) && !self.pinned_by_open_writes(p))
                    .collect();
                if candidates.len() < excess {
                    return Err(MsError::DirtyLimitUnsatisfiable);
                }
                candidates.sort_unstable();
                for &(_, p) in &candidates[..excess] {
                    self.write_back(p)?;
                }
            }
            for p in region {
                self.clock += 1;
                if self.dirtied[p].is_none() {
                    self.dirty_count += 1;
                }
                self.dirtied[p] = Some(self.clock);
            }
            debug_assert!(self.dirty_count <= self.dirty_page_limit);
        }
        let open = Open { offset, len, mode };
        let id = self.next_token;
        self.next_token += 1;
        self.tokens.insert(id, open);
        Ok(MsToken(id))
    }

    fn lookup(&self, token: MsToken) -> Result<Open, MsError> {
        self.tokens
            .get(&token.0)
            .copied()
            .ok_or(MsError::TokenNotLive)
    }

    pub fn slice(&self, token: MsToken) -> Result<&[u8], MsError> {
        let o = self.lookup(token)?;
        Ok(&self.ram[o.offset..o.offset + o.len])
    }

    pub fn slice_mut(&mut self, token: MsToken) -> Result<&mut [u8], MsError> {
        let o = self.lookup(token)?;
        if o.mode != AccessMode::Write {
            return Err(MsError::ReadOnlyToken);
        }
        Ok(&mut self.ram[o.offset..o.offset + o.len])
    }

    pub fn close(&mut self, token: MsToken) -> Result<(), MsError> {
        self.tokens
            .remove(&token.0)
            .map(|_| ())
            .ok_or(MsError::TokenNotLive)
    }

    /// Writes every dirty page, the page metadata and a header. Returns the
    /// words transferred.
    pub fn checkpoint(&mut self) -> Result<u64, MsError> {
        let start = self.storage.meter();
        let dirty: Vec<usize> = (0..self.page_count()).filter(|&p| self.is_dirty(p)).collect();
        for p in dirty {
            self.write_back(p)?;
        }
        let meta_at = self.ram.len();
        let meta = vec![0u8; self.page_count()];
        self.storage.write(meta_at, &meta)?;
        let mut header = [0u8; HEADER_BYTES];
        header[..4].copy_from_slice(b"MSCP");
        header[4..8].copy_from_slice(&(self.page_size as u32).to_le_bytes());
        header[8..12].copy_from_slice(&(self.ram.len() as u32).to_le_bytes());
        self.storage.write(meta_at + self.page_count(), &header)?;
        Ok(self.storage.meter().since(&start).total())
    }

    /// Upper bound on [`checkpoint`](Self::checkpoint) words.
    pub fn checkpoint_bound(&self) -> u64 {
        let pages = (self.dirty_page_limit * self.page_size).div_ceil(4) as u64;
        pages + words_for(self.page_count()) + words_for(HEADER_BYTES)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::SimulatedNvm;
    use proptest::prelude::*;

    fn pool(data: usize, page: usize, limit: usize) -> ManagedStatePool<SimulatedNvm> {
        ManagedStatePool::new(SimulatedNvm::default(), data, page, limit).unwrap()
    }

    #[test]
    fn metadata_is_one_byte_per_page() {
        for (p, want) in [(32, 1856), (64, 928), (128, 464), (256, 232), (512, 116)] {
            assert_eq!(pool(59392, p, 11878).metadata_bytes(), want);
        }
    }

    #[test]
    fn dirty_page_limits() {
        assert_eq!(pool(59392, 32, 11878).dirty_page_limit(), 313);
        assert_eq!(pool(59392, 512, 11878).dirty_page_limit(), 22);
        assert!(matches!(
            ManagedStatePool::new(SimulatedNvm::default(), 4096, 48, 1024),
            Err(MsError::InvalidPageSize(48))
        ));
        assert!(matches!(
            ManagedStatePool::new(SimulatedNvm::default(), 4096, 512, 519),
            Err(MsError::LimitTooSmall { .. })
        ));
    }

    #[test]
    fn open_marks_overlapping_pages() {
        let mut m = pool(4096, 512, 4096);
        let t = m.open(100, 1, AccessMode::Write).unwrap();
        assert_eq!(m.dirty_pages(), 1);
        m.close(t).unwrap();
        let t = m.open(0, 4096, AccessMode::Read).unwrap();
        assert_eq!(m.dirty_pages(), 1);
        m.close(t).unwrap();
        let t = m.open(511, 2, AccessMode::Write).unwrap();
        assert_eq!(m.dirty_pages(), 2);
        assert!(m.is_dirty(0) && m.is_dirty(1));
        m.close(t).unwrap();
        assert_eq!(m.cost().total(), 0);
        assert!(matches!(m.close(t), Err(MsError::TokenNotLive)));
    }

    #[test]
    fn least_recently_dirtied_is_written_back() {
        let mut m = pool(2048, 256, 520);
        assert_eq!(m.dirty_page_limit(), 2);
        for off in [0, 256] {
            let t = m.open(off, 4, AccessMode::Write).unwrap();
            m.close(t).unwrap();
        }
        // redirty page 0 so page 1 becomes the oldest
        let t = m.open(0, 4, AccessMode::Write).unwrap();
        m.close(t).unwrap();
        let t = m.open(512, 4, AccessMode::Write).unwrap();
        m.close(t).unwrap();
        assert!(m.is_dirty(0) && !m.is_dirty(1) && m.is_dirty(2));
        assert_eq!(m.cost().words_written, 64);
    }

    #[test]
    fn open_writes_are_never_victims() {
        let mut m = pool(2048, 256, 520);
        let a = m.open(0, 4, AccessMode::Write).unwrap();
        let b = m.open(256, 4, AccessMode::Write).unwrap();
        assert!(matches!(
            m.open(512, 4, AccessMode::Write),
            Err(MsError::DirtyLimitUnsatisfiable)
        ));
        m.close(a).unwrap();
        m.open(512, 4, AccessMode::Write).unwrap();
        assert!(!m.is_dirty(0) && m.is_dirty(1));
        m.close(b).unwrap();
        assert!(matches!(
            m.open(0, 1024, AccessMode::Write),
            Err(MsError::RegionExceedsDirtyLimit { .. })
        ));
    }

    #[test]
    fn tokens_check_mode() {
        let mut m = pool(1024, 32, 512);
        let t = m.open(0, 8, AccessMode::Read).unwrap();
        assert!(matches!(m.slice_mut(t), Err(MsError::ReadOnlyToken)));
        m.close(t).unwrap();
        let t = m.open(8, 8, AccessMode::Write).unwrap();
        m.slice_mut(t).unwrap().copy_from_slice(&[7; 8]);
        m.close(t).unwrap();
        let t = m.open(0, 16, AccessMode::Read).unwrap();
        assert_eq!(&m.slice(t).unwrap()[8..], &[7; 8]);
    }

    #[test]
    fn checkpoint_costs() {
        let mut m = pool(4096, 512, 4096);
        assert_eq!(m.checkpoint().unwrap(), 2 + 4);
        for page in 0..4 {
            let t = m.open(page * 512, 1, AccessMode::Write).unwrap();
            m.close(t).unwrap();
        }
        let w = m.checkpoint().unwrap();
        assert_eq!(w, 4 * 128 + 2 + 4);
        assert!(w <= m.checkpoint_bound());
        assert_eq!(m.dirty_pages(), 0);
    }

    proptest! {
        #[test]
        fn dirty_set_matches_bitmap_oracle(
            page_idx in 0usize..5,
            ops in prop::collection::vec((0usize..4000, 1usize..300, any::<bool>()), 1..200),
        ) {
            let page = PAGE_SIZES[page_idx];
            let mut m = pool(4096, page, 2048);
            let limit = m.dirty_page_limit();
            let mut oracle = vec![false; m.page_count()];
            let mut written = 0u64;
            for (off, len, write) in ops {
                let len = len.min(4096 - off);
                let mode = if write { AccessMode::Write } else { AccessMode::Read };
                let before: Vec<bool> = (0..m.page_count()).map(|p| m.is_dirty(p)).collect();
                let cost = m.cost();
                match m.open(off, len, mode) {
                    Ok(t) => {
                        m.close(t).unwrap();
                        if write {
                            for p in off / page..=(off + len - 1) / page {
                                oracle[p] = true;
                            }
                        }
                    }
                    Err(MsError::RegionExceedsDirtyLimit { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
                // pages that were cleaned were written back exactly once
                for p in 0..m.page_count() {
                    if before[p] && !m.is_dirty(p) {
                        oracle[p] = false;
                        written += m.page_bytes(p).len().div_ceil(4) as u64;
                    }
                    prop_assert_eq!(oracle[p], m.is_dirty(p));
                }
                prop_assert_eq!(m.cost().since(&cost).total() + cost.total(), m.cost().total());
                prop_assert!(m.dirty_pages() <= limit);
            }
            prop_assert_eq!(m.cost().words_written, written);
            let dirty: u64 = (0..m.page_count())
                .filter(|&p| m.is_dirty(p))
                .map(|p| m.page_bytes(p).len().div_ceil(4) as u64)
                .sum();
            let meta = words_for(m.page_count()) + words_for(HEADER_BYTES);
            prop_assert_eq!(m.checkpoint().unwrap(), dirty + meta);
        }
    }
}
