//! Checkpoint cost under a workload that saturates the dirty budget, swept
//! over the dirty limit or the RAM size, next to unmanaged RAM.

use std::str::FromStr;

use vnv_core::baselines::UnmanagedRam;
use vnv_core::heap::{HEADER_CHARGE, RESIDENT_META_BYTES};
use vnv_core::{persist_bound, EnergyModel, HeapConfig, ObjectHandle, SimulatedNvm, VnvHeap};

use crate::BenchRecord;

pub const FIXED_RAM: usize = 4096;
pub const FIXED_LIMIT: usize = 2048;
pub const LIMITS: [usize; 4] = [512, 1024, 2048, 4096];
pub const RAM_SIZES: [usize; 4] = [4096, 8192, 16384, 32768];

/// Objects in the saturating set.
const SATURATING_OBJECTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistMode {
    VaryLimit,
    VaryRam,
}

impl FromStr for PersistMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vary-limit" | "vary_limit" => Ok(PersistMode::VaryLimit),
            "vary-ram" | "vary_ram" => Ok(PersistMode::VaryRam),
            _ => Err(format!("unknown persist mode {s:?} (expected vary-limit or vary-ram)")),
        }
    }
}

/// Object sizes whose modified payloads plus resident metadata and header
/// fill a dirty budget of `limit` bytes exactly.
pub fn saturating_sizes(limit: usize) -> Vec<usize> {
    let payload = limit - HEADER_CHARGE - RESIDENT_META_BYTES * SATURATING_OBJECTS;
    assert!(payload.is_multiple_of(4), "limit must be a multiple of 4");
    let words = payload / 4;
    (0..SATURATING_OBJECTS)
        .map(|i| 4 * (words / SATURATING_OBJECTS + usize::from(i >= SATURATING_OBJECTS - words % SATURATING_OBJECTS)))
        .collect()
}

/// Builds a heap whose whole dirty budget is in use.
pub fn saturated_heap(
    cache: usize,
    limit: usize,
    round: u8,
) -> anyhow::Result<(VnvHeap<SimulatedNvm>, Vec<ObjectHandle>)> {
    let heap = VnvHeap::init(SimulatedNvm::default(), HeapConfig::new(cache, limit))?;
    let handles = saturating_sizes(limit)
        .into_iter()
        .map(|n| heap.alloc(&vec![round; n]))
        .collect::<Result<Vec<_>, _>>()?;
    heap.persist()?;
    saturate(&heap, &handles, round.wrapping_add(1))?;
    Ok((heap, handles))
}

/// Marks every object of the set modified with fresh contents.
pub fn saturate(
    heap: &VnvHeap<SimulatedNvm>,
    handles: &[ObjectHandle],
    fill: u8,
) -> anyhow::Result<()> {
    for &h in handles {
        heap.get_mut(h)?.fill(fill);
    }
    let limit = heap.config().max_modified_state_bytes;
    anyhow::ensure!(
        heap.stats().dirty_bytes == limit,
        "dirty state {} does not saturate the limit {limit}",
        heap.stats().dirty_bytes
    );
    Ok(())
}

/// Largest persist cost observed over `rounds` saturate+persist rounds.
pub fn vnv_persist_words(cache: usize, limit: usize, rounds: u32) -> anyhow::Result<u64> {
    let (heap, handles) = saturated_heap(cache, limit, 0)?;
    let mut max = 0;
    for round in 0..rounds {
        if round > 0 {
            saturate(&heap, &handles, round as u8)?;
        }
        let report = heap.persist()?;
        anyhow::ensure!(report.words_transferred <= persist_bound(&heap.config()));
        max = max.max(report.words_transferred);
    }
    Ok(max)
}

pub fn run_persist_bench(
    mode: PersistMode,
    values: &[usize],
    model: &EnergyModel,
) -> anyhow::Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &v in values {
        let (cache, limit) = match mode {
            PersistMode::VaryLimit => (FIXED_RAM, v),
            PersistMode::VaryRam => (v, FIXED_LIMIT),
        };
        let case = match mode {
            PersistMode::VaryLimit => "vary_limit",
            PersistMode::VaryRam => "vary_ram",
        };
        let words = vnv_persist_words(cache, limit, 4)?;
        let mut r = BenchRecord::new("persist", "vnv", case).with_cost(
            vnv_core::CostMeter {
                words_read: 0,
                words_written: words,
            },
            1,
            model,
        );
        r.cache_size = Some(cache);
        r.dirty_limit = Some(limit);
        out.push(r);

        let ram = UnmanagedRam::new(cache);
        let mut nvm = SimulatedNvm::new(cache);
        let words = ram.checkpoint(&mut nvm, 0)?;
        let mut r = BenchRecord::new("persist", "unmanaged", case).with_cost(
            vnv_core::CostMeter {
                words_read: 0,
                words_written: words,
            },
            1,
            model,
        );
        r.cache_size = Some(cache);
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturating_sizes_sum() {
        assert_eq!(saturating_sizes(2048), vec![504, 504, 504, 508]);
        for l in LIMITS {
            let s = saturating_sizes(l);
            assert_eq!(s.iter().sum::<usize>() + 12 + 16, l);
        }
    }

    #[test]
    fn saturated_persist_equals_bound() {
        for (cache, limit) in [(4096, 512), (4096, 4096), (32768, 2048)] {
            let w = vnv_persist_words(cache, limit, 2).unwrap();
            assert_eq!(w, persist_bound(&HeapConfig::new(cache, limit)));
        }
    }
}
