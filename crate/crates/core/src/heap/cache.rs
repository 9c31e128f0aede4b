use std::cell::UnsafeCell;
use std::ptr::NonNull;

/// The volatile cache buffer.
///
/// Guards hand out slices into this buffer while the heap keeps mutating its
/// bookkeeping, so the bytes sit behind `UnsafeCell` and are only touched
/// through raw pointers here. Callers uphold that a region is never copied
/// into while a guard for it is live.
pub(crate) struct CacheBuf {
    bytes: Box<[UnsafeCell<u8>]>,
}

impl CacheBuf {
    pub(crate) fn new(len: usize) -> Self {
        CacheBuf {
            bytes: (0..len).map(|_| UnsafeCell::new(0)).collect(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.bytes.len()
    }

    fn base(&self) -> *mut u8 {
        // UnsafeCell<u8> has the same layout as u8
        UnsafeCell::raw_get(self.bytes.as_ptr())
    }

    pub(crate) fn ptr(&self, offset: usize) -> NonNull<u8> {
        assert!(offset <= self.len());
        // SAFETY: offset is within (or one past) the allocation.
        unsafe { NonNull::new_unchecked(self.base().add(offset)) }
    }

    /// Copies `src` into the cache at `offset`. The target region must not be
    /// borrowed by a live guard.
    pub(crate) fn copy_in(&self, offset: usize, src: &[u8]) {
        assert!(offset + src.len() <= self.len());
        // SAFETY: bounds checked above; src is a distinct allocation.
        unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), self.base().add(offset), src.len()) }
    }

    pub(crate) fn copy_out(&self, offset: usize, dst: &mut [u8]) {
        assert!(offset + dst.len() <= self.len());
        // SAFETY: bounds checked above; dst is a distinct allocation.
        unsafe { std::ptr::copy_nonoverlapping(self.base().add(offset), dst.as_mut_ptr(), dst.len()) }
    }

    pub(crate) fn fill(&self, offset: usize, len: usize, byte: u8) {
        assert!(offset + len <= self.len());
        // SAFETY: bounds checked above.
        unsafe { std::ptr::write_bytes(self.base().add(offset), byte, len) }
    }
}
