//! Application workloads: FIFO queues and a key-value store over several
//! backends, plus the access-pattern and object-size generators.

mod kvs;
mod mix;
mod pattern;
mod queue;

pub use kvs::{KvBackend, KvsError, MsKvs, VnvKvs};
pub use mix::WorkloadSpec;
pub use pattern::{gen_access_sequence, unequal_weight, AccessPattern, ParsePatternError};
pub use queue::{NvmQueue, QueueError, RamQueue, VnvQueue, RAM_QUEUE_BYTES};
