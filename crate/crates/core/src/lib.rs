//! A virtually non-volatile heap for intermittently powered systems.
//!
//! Objects live in non-volatile storage and are cached in a bounded
//! volatile buffer. The heap tracks modification per object and keeps the
//! amount of unsynchronized state under a fixed limit, so that
//! [`VnvHeap::persist`] always finishes within [`persist_bound`] word
//! transfers.
//!
//! ```
//! use vnv_core::{HeapConfig, SimulatedNvm, VnvHeap};
//!
//! let heap = VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(8192, 2048)).unwrap();
//! let packet = heap.alloc(&[0u8; 64]).unwrap();
//! heap.get_mut(packet).unwrap()[0] = 0x45;
//! assert_eq!(heap.get_ref(packet).unwrap()[0], 0x45);
//! heap.persist().unwrap();
//! ```

pub mod baselines;
pub mod extent;
pub mod heap;
pub mod persistence;
pub mod storage;
pub mod workloads;

pub use heap::{
    HeapConfig, HeapError, HeapStats, ObjectHandle, ObjectMeta, ReadGuard, Shortage, VnvHeap,
    WriteGuard,
};
pub use persistence::{persist_bound, wcec, EnergyModel, NvmLayout, PersistReport};
pub use storage::{
    CostMeter, FaultPlan, FileBackedNvm, SimulatedNvm, StorageDevice, StorageError, WORD_BYTES,
};
