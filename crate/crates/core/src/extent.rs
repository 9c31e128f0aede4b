//! First-fit extent allocator with coalescing, used for both the volatile
//! cache buffer and the NVM object region.

/// Allocation granularity and alignment in bytes.
pub const ALIGN: usize = 4;

pub const fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// A half-open byte range `[offset, offset + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Extent {
    pub offset: usize,
    pub len: usize,
}

impl Extent {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Free list kept sorted by offset; adjacent free extents are always merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtentAllocator {
    base: usize,
    len: usize,
    free: Vec<Extent>,
}

impl ExtentAllocator {
    /// Manages `[base, base + len)`. Both ends are rounded inwards to [`ALIGN`].
    pub fn new(base: usize, len: usize) -> Self {
        let start = align_up(base);
        let end = (base + len) / ALIGN * ALIGN;
        let len = end.saturating_sub(start);
        let free = if len > 0 {
            vec![Extent { offset: start, len }]
        } else {
            Vec::new()
        };
        ExtentAllocator {
            base: start,
            len,
            free,
        }
    }

    pub fn region(&self) -> Extent {
        Extent {
            offset: self.base,
            len: self.len,
        }
    }

    pub fn free_extents(&self) -> &[Extent] {
        &self.free
    }

    pub fn free_bytes(&self) -> usize {
        self.free.iter().map(|e| e.len).sum()
    }

    pub fn largest_free(&self) -> usize {
        self.free.iter().map(|e| e.len).max().unwrap_or(0)
    }

    /// First-fit allocation of `size` bytes (rounded up to [`ALIGN`], at
    /// least one unit).
    pub fn alloc(&mut self, size: usize) -> Option<Extent> {
        let size = align_up(size.max(1));
        let idx = self.free.iter().position(|e| e.len >= size)?;
        let hole = &mut self.free[idx];
        let out = Extent {
            offset: hole.offset,
            len: size,
        };
        if hole.len == size {
            self.free.remove(idx);
        } else {
            hole.offset += size;
            hole.len -= size;
        }
        Some(out)
    }

    /// Claims a specific extent, which must lie entirely inside one free hole.
    pub fn claim(&mut self, extent: Extent) -> bool {
        if !extent.offset.is_multiple_of(ALIGN) || extent.len == 0 {
            return false;
        }
        let extent = Extent {
            offset: extent.offset,
            len: align_up(extent.len),
        };
        let Some(idx) = self
            .free
            .iter()
            .position(|h| h.offset <= extent.offset && extent.end() <= h.end())
        else {
            return false;
        };
        let hole = self.free.remove(idx);
        let mut at = idx;
        if hole.offset < extent.offset {
            self.free.insert(
                at,
                Extent {
                    offset: hole.offset,
                    len: extent.offset - hole.offset,
                },
            );
            at += 1;
        }
        if extent.end() < hole.end() {
            self.free.insert(
                at,
                Extent {
                    offset: extent.end(),
                    len: hole.end() - extent.end(),
                },
            );
        }
        true
    }

    /// Returns an extent to the free list, merging with its neighbours.
    ///
    /// Panics if the extent overlaps free space (double free).
    pub fn free(&mut self, extent: Extent) {
        let extent = Extent {
            offset: extent.offset,
            len: align_up(extent.len.max(1)),
        };
        let idx = self.free.partition_point(|e| e.offset < extent.offset);
        if let Some(next) = self.free.get(idx) {
            assert!(extent.end() <= next.offset, "double free of {extent:?}");
        }
        if idx > 0 {
            assert!(
                self.free[idx - 1].end() <= extent.offset,
                "double free of {extent:?}"
            );
        }
        self.free.insert(idx, extent);
        if idx + 1 < self.free.len() && self.free[idx].end() == self.free[idx + 1].offset {
            self.free[idx].len += self.free[idx + 1].len;
            self.free.remove(idx + 1);
        }
        if idx > 0 && self.free[idx - 1].end() == self.free[idx].offset {
            self.free[idx - 1].len += self.free[idx].len;
            self.free.remove(idx);
        }
    }

    /// Would an allocation of `size` succeed after freeing `extents`?
    pub fn fits_after_freeing(&self, size: usize, extents: &[Extent]) -> bool {
        let mut trial = self.clone();
        for e in extents {
            trial.free(*e);
        }
        trial.largest_free() >= align_up(size.max(1))
    }
}
