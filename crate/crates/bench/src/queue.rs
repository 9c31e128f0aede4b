//! FIFO queue latency: push one element and pop the oldest, after staging a
//! queue of a given length.

use std::str::FromStr;

use vnv_core::storage::DEFAULT_CAPACITY;
use vnv_core::workloads::{NvmQueue, QueueError, RamQueue, VnvQueue, RAM_QUEUE_BYTES};
use vnv_core::{CostMeter, EnergyModel, HeapConfig, SimulatedNvm, VnvHeap};

use crate::BenchRecord;

pub const ELEMENT_SIZE: usize = 256;

/// Push+pop pairs averaged per measurement.
pub const DEFAULT_REPS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueBackend {
    Ram,
    Nvm,
    Vnv,
}

impl QueueBackend {
    pub const ALL: [QueueBackend; 3] = [QueueBackend::Ram, QueueBackend::Nvm, QueueBackend::Vnv];

    pub fn name(&self) -> &'static str {
        match self {
            QueueBackend::Ram => "ram",
            QueueBackend::Nvm => "nvm",
            QueueBackend::Vnv => "vnv",
        }
    }
}

impl FromStr for QueueBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ram" => Ok(QueueBackend::Ram),
            "nvm" => Ok(QueueBackend::Nvm),
            "vnv" => Ok(QueueBackend::Vnv),
            _ => Err(format!("unknown queue backend {s:?} (expected ram, nvm or vnv)")),
        }
    }
}

fn element(i: usize) -> Vec<u8> {
    (0..ELEMENT_SIZE).map(|j| (i * 7 + j) as u8).collect()
}

/// Stages `initial_len` elements, then measures `reps` push+pop pairs,
/// checking FIFO order as it goes.
pub fn measure_queue(
    initial_len: usize,
    backend: QueueBackend,
    cache_size: usize,
    dirty_limit: usize,
    reps: u64,
) -> Result<CostMeter, QueueError> {
    let mut next = 0;
    let mut oldest = 0;
    let mut check = |got: Vec<u8>| {
        assert_eq!(got, element(oldest), "queue lost FIFO order");
        oldest += 1;
    };
    match backend {
        QueueBackend::Ram => {
            let mut q = RamQueue::new(ELEMENT_SIZE, RAM_QUEUE_BYTES);
            while next < initial_len {
                q.push(&element(next))?;
                next += 1;
            }
            for _ in 0..reps {
                q.push(&element(next))?;
                next += 1;
                check(q.pop()?);
            }
            Ok(CostMeter::default())
        }
        QueueBackend::Nvm => {
            let mut q = NvmQueue::new(SimulatedNvm::new(DEFAULT_CAPACITY), ELEMENT_SIZE);
            while next < initial_len {
                q.push(&element(next))?;
                next += 1;
            }
            q.reset_cost();
            for _ in 0..reps {
                q.push(&element(next))?;
                next += 1;
                check(q.pop()?);
            }
            Ok(q.cost())
        }
        QueueBackend::Vnv => {
            let heap = VnvHeap::init(
                SimulatedNvm::new(DEFAULT_CAPACITY),
                HeapConfig::new(cache_size, dirty_limit),
            )?;
            let mut q = VnvQueue::new(ELEMENT_SIZE);
            while next < initial_len {
                q.push(&heap, &element(next))?;
                next += 1;
            }
            heap.reset_cost();
            for _ in 0..reps {
                q.push(&heap, &element(next))?;
                next += 1;
                check(q.pop(&heap)?);
            }
            Ok(heap.cost())
        }
    }
}

pub fn run_queue_bench(
    initial_len: usize,
    backend: QueueBackend,
    cache_size: usize,
    dirty_limit: usize,
    reps: u64,
    model: &EnergyModel,
) -> anyhow::Result<BenchRecord> {
    let cost = measure_queue(initial_len, backend, cache_size, dirty_limit, reps)?;
    let mut r = BenchRecord::new("queue", backend.name(), "push_pop").with_cost(cost, reps, model);
    r.object_size = Some(ELEMENT_SIZE);
    r.queue_len = Some(initial_len);
    if backend == QueueBackend::Vnv {
        r.cache_size = Some(cache_size);
        r.dirty_limit = Some(dirty_limit);
    } else if backend == QueueBackend::Ram {
        r.cache_size = Some(RAM_QUEUE_BYTES);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ram_backend_limits() {
        assert_eq!(measure_queue(15, QueueBackend::Ram, 0, 0, 8).unwrap().total(), 0);
        assert!(matches!(
            measure_queue(16, QueueBackend::Ram, 0, 0, 8),
            Err(QueueError::RamCapacityExceeded(16))
        ));
    }

    #[test]
    fn nvm_backend_is_flat() {
        for len in [0, 10, 100] {
            let c = measure_queue(len, QueueBackend::Nvm, 0, 0, 4).unwrap();
            assert_eq!(c.total(), 4 * 128);
        }
    }
}
