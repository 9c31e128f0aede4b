use std::collections::VecDeque;

use thiserror::Error;

use crate::heap::{HeapError, ObjectHandle, VnvHeap};
use crate::storage::{CostMeter, StorageDevice, StorageError};

/// RAM available to the RAM-only queue.
pub const RAM_QUEUE_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("queue is empty")]
    Empty,
    #[error("element of {got} bytes, queue holds {want}-byte elements")]
    SizeMismatch { got: usize, want: usize },
    #[error("RAM queue is full at {0} elements")]
    RamCapacityExceeded(usize),
    #[error("NVM ring is full at {0} elements")]
    OutOfNvm(usize),
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

fn check_size(payload: &[u8], want: usize) -> Result<(), QueueError> {
    if payload.len() != want {
        return Err(QueueError::SizeMismatch {
            got: payload.len(),
            want,
        });
    }
    Ok(())
}

/// FIFO of fixed-size elements, one heap object per element.
#[derive(Debug, Clone)]
pub struct VnvQueue {
    element_size: usize,
    items: VecDeque<ObjectHandle>,
}

impl VnvQueue {
    pub fn new(element_size: usize) -> Self {
        VnvQueue {
            element_size,
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn handles(&self) -> impl Iterator<Item = &ObjectHandle> {
        self.items.iter()
    }

    pub fn push<S: StorageDevice>(
        &mut self,
        heap: &VnvHeap<S>,
        payload: &[u8],
    ) -> Result<(), QueueError> {
        check_size(payload, self.element_size)?;
        let h = heap.alloc(payload)?;
        self.items.push_back(h);
        Ok(())
    }

    pub fn pop<S: StorageDevice>(&mut self, heap: &VnvHeap<S>) -> Result<Vec<u8>, QueueError> {
        let &h = self.items.front().ok_or(QueueError::Empty)?;
        let value = heap.get_ref(h)?.to_vec();
        heap.dealloc(h)?;
        self.items.pop_front();
        Ok(value)
    }
}

/// FIFO held entirely in a fixed RAM budget; nothing touches storage.
#[derive(Debug, Clone)]
pub struct RamQueue {
    element_size: usize,
    capacity: usize,
    items: VecDeque<Vec<u8>>,
}

impl RamQueue {
    pub fn new(element_size: usize, ram_bytes: usize) -> Self {
        RamQueue {
            element_size,
            capacity: ram_bytes / element_size,
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, payload: &[u8]) -> Result<(), QueueError> {
        check_size(payload, self.element_size)?;
        if self.items.len() == self.capacity {
            return Err(QueueError::RamCapacityExceeded(self.capacity));
        }
        self.items.push_back(payload.to_vec());
        Ok(())
    }

    pub fn pop(&mut self) -> Result<Vec<u8>, QueueError> {
        self.items.pop_front().ok_or(QueueError::Empty)
    }
}

/// FIFO ring stored directly in NVM: every push writes and every pop reads
/// one whole element. Head and tail live in RAM and are not charged.
pub struct NvmQueue<S> {
    storage: S,
    element_size: usize,
    slots: usize,
    head: usize,
    len: usize,
}

impl<S: StorageDevice> NvmQueue<S> {
    pub fn new(storage: S, element_size: usize) -> Self {
        let slots = storage.capacity() / element_size;
        NvmQueue {
            storage,
            element_size,
            slots,
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cost(&self) -> CostMeter {
        self.storage.meter()
    }

    pub fn reset_cost(&mut self) {
        self.storage.reset_meter()
    }

    pub fn push(&mut self, payload: &[u8]) -> Result<(), QueueError> {
        check_size(payload, self.element_size)?;
        if self.len == self.slots {
            return Err(QueueError::OutOfNvm(self.slots));
        }
        let slot = (self.head + self.len) % self.slots;
        self.storage.write(slot * self.element_size, payload)?;
        self.len += 1;
        Ok(())
    }

    pub fn pop(&mut self) -> Result<Vec<u8>, QueueError> {
        if self.len == 0 {
            return Err(QueueError::Empty);
        }
        let value = self
            .storage
            .read_vec(self.head * self.element_size, self.element_size)?;
        self.head = (self.head + 1) % self.slots;
        self.len -= 1;
        Ok(value)
    }
}
