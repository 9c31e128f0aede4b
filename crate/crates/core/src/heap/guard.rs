use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;

use super::{ObjectHandle, VnvHeap};
use crate::storage::StorageDevice;

/// Shared access to a resident, pinned object. Dropping it unpins.
pub struct ReadGuard<'h, S: StorageDevice> {
    heap: &'h VnvHeap<S>,
    handle: ObjectHandle,
    ptr: NonNull<u8>,
    _bytes: PhantomData<&'h [u8]>,
}

impl<'h, S: StorageDevice> ReadGuard<'h, S> {
    pub(super) fn new(heap: &'h VnvHeap<S>, handle: ObjectHandle, ptr: NonNull<u8>) -> Self {
        ReadGuard {
            heap,
            handle,
            ptr,
            _bytes: PhantomData,
        }
    }

    pub fn handle(&self) -> ObjectHandle {
        self.handle
    }

    /// Offset of the payload inside the cache buffer; stable while the guard lives.
    pub fn cache_offset(&self) -> usize {
        self.ptr.as_ptr() as usize - self.heap.cache.ptr(0).as_ptr() as usize
    }

    pub fn release(self) {}
}

impl<S: StorageDevice> Deref for ReadGuard<'_, S> {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        // SAFETY: the object is pinned for the guard's lifetime, so its cache
        // region neither moves nor is reused, and no write guard exists.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.handle.len()) }
    }
}

impl<S: StorageDevice> Drop for ReadGuard<'_, S> {
    fn drop(&mut self) {
        self.heap.release_read(&self.handle);
    }
}

/// Exclusive access to a resident, pinned, modified object.
pub struct WriteGuard<'h, S: StorageDevice> {
    heap: &'h VnvHeap<S>,
    handle: ObjectHandle,
    ptr: NonNull<u8>,
    _bytes: PhantomData<&'h mut [u8]>,
}

impl<'h, S: StorageDevice> WriteGuard<'h, S> {
    pub(super) fn new(heap: &'h VnvHeap<S>, handle: ObjectHandle, ptr: NonNull<u8>) -> Self {
        WriteGuard {
            heap,
            handle,
            ptr,
            _bytes: PhantomData,
        }
    }

    pub fn handle(&self) -> ObjectHandle {
        self.handle
    }

    pub fn cache_offset(&self) -> usize {
        self.ptr.as_ptr() as usize - self.heap.cache.ptr(0).as_ptr() as usize
    }

    pub fn release(self) {}
}

impl<S: StorageDevice> Deref for WriteGuard<'_, S> {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        // SAFETY: see ReadGuard; this guard is the only one for the object.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.handle.len()) }
    }
}

impl<S: StorageDevice> DerefMut for WriteGuard<'_, S> {
    fn deref_mut(&mut self) -> &mut [u8] {
        // SAFETY: exclusive per object, enforced by the heap's pin state.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.handle.len()) }
    }
}

impl<S: StorageDevice> Drop for WriteGuard<'_, S> {
    fn drop(&mut self) {
        self.heap.release_write(&self.handle);
    }
}

/// A released guard cannot be used again:
///
/// ```compile_fail
/// use vnv_core::{HeapConfig, SimulatedNvm, VnvHeap};
/// let heap = VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(4096, 2048)).unwrap();
/// let h = heap.alloc(&[1, 2, 3]).unwrap();
/// let g = heap.get_mut(h).unwrap();
/// g.release();
/// let _ = g[0];
/// ```
///
/// and a read guard cannot be written through:
///
/// ```compile_fail
/// use vnv_core::{HeapConfig, SimulatedNvm, VnvHeap};
/// let heap = VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(4096, 2048)).unwrap();
/// let h = heap.alloc(&[1, 2, 3]).unwrap();
/// let mut g = heap.get_ref(h).unwrap();
/// g[0] = 7;
/// ```
///
/// nor can a guard outlive its heap:
///
/// ```compile_fail
/// use vnv_core::{HeapConfig, SimulatedNvm, VnvHeap};
/// let heap = VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(4096, 2048)).unwrap();
/// let h = heap.alloc(&[1, 2, 3]).unwrap();
/// let g = heap.get_ref(h).unwrap();
/// let nvm = heap.into_storage();
/// let _ = g[0];
/// ```
#[allow(dead_code)]
struct GuardCompileChecks;
