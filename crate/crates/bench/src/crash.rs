//! Power-failure checks: random traces cut by a persist under a fault plan,
//! and torn checkpoints on the double buffer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnv_core::storage::StorageError;
use vnv_core::{
    persist_bound, HeapConfig, HeapError, ObjectHandle, SimulatedNvm, StorageDevice, VnvHeap,
};

use crate::persist::{saturate, saturated_heap};

/// Outcome of a batch of crash/restore iterations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrashReport {
    pub iterations: u64,
    pub failures: Vec<String>,
}

impl CrashReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// One iteration: random trace, persist with the budget armed at the bound,
/// reboot, restore and compare every object with the shadow copy. Objects
/// pinned during the persist must come back at the same cache offsets.
pub fn crash_iteration(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cache = 4 * rng.gen_range(512..=2048);
    let limit = 4 * rng.gen_range(128..=cache / 4);
    let config = HeapConfig::new(cache, limit);
    let heap = VnvHeap::init(SimulatedNvm::default(), config).map_err(|e| e.to_string())?;
    let mut shadow: HashMap<ObjectHandle, Vec<u8>> = HashMap::new();
    let mut live: Vec<ObjectHandle> = Vec::new();

    let ops = rng.gen_range(20..200);
    for _ in 0..ops {
        match rng.gen_range(0..10) {
            0..=2 => {
                let n = rng.gen_range(1..=(cache / 4).min(512));
                let mut data = vec![0; n];
                rng.fill(&mut data[..]);
                if let Ok(h) = heap.alloc(&data) {
                    live.push(h);
                    shadow.insert(h, data);
                }
            }
            3 if !live.is_empty() => {
                let h = live.swap_remove(rng.gen_range(0..live.len()));
                heap.dealloc(h).map_err(|e| e.to_string())?;
                shadow.remove(&h);
            }
            4 => {
                heap.persist().map_err(|e| e.to_string())?;
            }
            _ if !live.is_empty() => {
                let h = live[rng.gen_range(0..live.len())];
                if let Ok(mut g) = heap.get_mut(h) {
                    let i = rng.gen_range(0..g.len());
                    g[i] = rng.gen();
                    shadow.get_mut(&h).unwrap()[i] = g[i];
                }
            }
            _ => {}
        }
    }

    let mut pinned = HashMap::new();
    let mut guards = Vec::new();
    for &h in live.iter().take(rng.gen_range(0..3)) {
        if let Ok(g) = heap.get_ref(h) {
            guards.push(g);
            pinned.insert(h, heap.meta(h).map_err(|e| e.to_string())?.cache_offset);
        }
    }
    let bound = persist_bound(&config);
    heap.with_storage(|s| s.arm_power_failure(bound));
    let report = heap.persist().map_err(|e| format!("persist within bound failed: {e}"))?;
    if report.words_transferred > bound {
        return Err(format!("persist used {} > {bound} words", report.words_transferred));
    }
    drop(guards);

    let mut storage = heap.into_storage();
    storage.reboot();
    let heap = VnvHeap::restore(storage).map_err(|e| format!("restore: {e}"))?;
    if heap.config() != config {
        return Err("restored configuration differs".into());
    }
    if heap.handles().len() != live.len() {
        return Err(format!("{} objects restored, {} expected", heap.handles().len(), live.len()));
    }
    for (h, offset) in pinned {
        let m = heap.meta(h).map_err(|e| e.to_string())?;
        if m.cache_offset != offset {
            return Err(format!("pinned object {} moved", h.id()));
        }
    }
    for (&h, want) in &shadow {
        let got = heap.get_ref(h).map_err(|e| format!("object {}: {e}", h.id()))?;
        if *got != want[..] {
            return Err(format!("object {} differs after restore", h.id()));
        }
    }
    Ok(())
}

pub fn run_crash_suite(seed: u64, iterations: u64) -> CrashReport {
    let mut report = CrashReport::default();
    for i in 0..iterations {
        report.iterations += 1;
        if let Err(e) = crash_iteration(seed.wrapping_add(i)) {
            report.failures.push(format!("seed {}: {e}", seed.wrapping_add(i)));
        }
    }
    report
}

/// What a torn persist left behind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornOutcome {
    pub budget: u64,
    pub bound: u64,
    pub failure_reported: bool,
    /// The restored heap came from the second (interrupted) checkpoint
    /// rather than the first.
    pub newer_checkpoint: bool,
}

const OLD_FILL: u8 = 0x11;
const NEW_FILL: u8 = 0x22;

/// Commits a checkpoint with the first object pinned, saturates the dirty
/// budget again, then persists with a fault budget of `budget` words and
/// restores. Every payload word must hold the old or the new contents.
pub fn torn_persist(cache: usize, limit: usize, budget: u64) -> Result<TornOutcome, String> {
    let err = |e: anyhow::Error| e.to_string();
    let (heap, handles) = saturated_heap(cache, limit, 0).map_err(err)?;
    saturate(&heap, &handles, OLD_FILL).map_err(err)?;
    {
        let _pin = heap.get_ref(handles[0]).map_err(|e| e.to_string())?;
        heap.persist().map_err(|e| e.to_string())?;
    }
    let pinned_offset = heap.meta(handles[0]).map_err(|e| e.to_string())?.cache_offset;
    saturate(&heap, &handles, NEW_FILL).map_err(err)?;

    let bound = persist_bound(&heap.config());
    heap.with_storage(|s| s.arm_power_failure(budget));
    let failure_reported = match heap.persist() {
        Ok(_) => false,
        Err(HeapError::Storage(StorageError::PowerFailureInjected)) => true,
        Err(e) => return Err(format!("unexpected persist error: {e}")),
    };

    let mut storage = heap.into_storage();
    storage.reboot();
    let heap = VnvHeap::restore(storage).map_err(|e| format!("restore: {e}"))?;
    let m0 = heap.meta(handles[0]).map_err(|e| e.to_string())?;
    let older = m0.resident && m0.cache_offset == pinned_offset;
    if older == !failure_reported {
        return Err(format!(
            "budget {budget}: failure reported {failure_reported}, older checkpoint {older}"
        ));
    }
    for &h in &handles {
        let g = heap.get_ref(h).map_err(|e| e.to_string())?;
        for (w, word) in g.chunks(4).enumerate() {
            let old = word.iter().all(|&b| b == OLD_FILL);
            let new = word.iter().all(|&b| b == NEW_FILL);
            if !(old || new) {
                return Err(format!("budget {budget}: object {} word {w} is torn", h.id()));
            }
            if !failure_reported && !new {
                return Err(format!("budget {budget}: committed persist lost word {w}"));
            }
        }
    }
    Ok(TornOutcome {
        budget,
        bound,
        failure_reported,
        newer_checkpoint: !older,
    })
}

/// Runs [`torn_persist`] for every budget from 0 to the bound.
pub fn sweep_torn_persists(cache: usize, limit: usize) -> Result<Vec<TornOutcome>, String> {
    let bound = persist_bound(&HeapConfig::new(cache, limit));
    (0..=bound).map(|b| torn_persist(cache, limit, b)).collect()
}
