//! Randomized property suites over the heap: dirty-limit and persist-bound
//! traces, the guard contract, and access-pattern statistics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnv_core::heap::{payload_charge, HEADER_CHARGE, RESIDENT_META_BYTES};
use vnv_core::storage::StorageError;
use vnv_core::workloads::{gen_access_sequence, unequal_weight, AccessPattern};
use vnv_core::{
    persist_bound, HeapConfig, HeapError, ObjectHandle, ReadGuard, Shortage, SimulatedNvm,
    StorageDevice, VnvHeap, WriteGuard,
};

/// Outcome of one or more random heap traces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceReport {
    pub ops: u64,
    pub dirty_violations: u64,
    pub accounting_mismatches: u64,
    pub shadow_mismatches: u64,
    pub persists: u64,
    pub bound_violations: u64,
    pub injected_faults: u64,
    pub max_dirty: usize,
    pub max_persist_words: u64,
}

impl TraceReport {
    pub fn passed(&self) -> bool {
        self.dirty_violations == 0
            && self.accounting_mismatches == 0
            && self.shadow_mismatches == 0
            && self.bound_violations == 0
            && self.injected_faults == 0
    }

    pub fn merge(&mut self, other: &TraceReport) {
        self.ops += other.ops;
        self.dirty_violations += other.dirty_violations;
        self.accounting_mismatches += other.accounting_mismatches;
        self.shadow_mismatches += other.shadow_mismatches;
        self.persists += other.persists;
        self.bound_violations += other.bound_violations;
        self.injected_faults += other.injected_faults;
        self.max_dirty = self.max_dirty.max(other.max_dirty);
        self.max_persist_words = self.max_persist_words.max(other.max_persist_words);
    }
}

enum Held<'h> {
    R(ObjectHandle, ReadGuard<'h, SimulatedNvm>),
    W(ObjectHandle, WriteGuard<'h, SimulatedNvm>),
}

impl Held<'_> {
    fn handle(&self) -> ObjectHandle {
        match self {
            Held::R(h, _) | Held::W(h, _) => *h,
        }
    }
}

/// Object sizes skewed towards small objects, up to `max`.
fn object_size(rng: &mut ChaCha8Rng, max: usize) -> usize {
    match rng.gen_range(0..10) {
        0..=5 => rng.gen_range(1..=64),
        6..=8 => rng.gen_range(65..=256),
        _ => rng.gen_range(257..=max),
    }
}

fn payload(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0; len];
    rng.fill(&mut v[..]);
    v
}

/// Independent recomputation of the dirty total from object metadata.
pub fn recompute_dirty<S: StorageDevice>(heap: &VnvHeap<S>) -> usize {
    HEADER_CHARGE
        + heap
            .metas()
            .iter()
            .map(|(_, m)| {
                RESIDENT_META_BYTES * usize::from(m.resident)
                    + payload_charge(m.size_bytes) * usize::from(m.modified)
                    + 20 * usize::from(m.entry_unflushed)
            })
            .sum::<usize>()
}

/// Drives a heap through `n_ops` random operations with a shadow map,
/// persisting now and then with the fault budget armed at the bound.
pub fn run_dirty_trace(seed: u64, n_ops: u64, config: HeapConfig) -> TraceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heap = VnvHeap::init(SimulatedNvm::default(), config).expect("valid config");
    let limit = config.max_modified_state_bytes;
    let bound = persist_bound(&config);
    let max_object = (config.cache_size_bytes - RESIDENT_META_BYTES).min(1024);
    let mut report = TraceReport::default();
    let mut shadow: HashMap<ObjectHandle, Vec<u8>> = HashMap::new();
    let mut live: Vec<ObjectHandle> = Vec::new();
    let mut held: Vec<Held> = Vec::new();

    for _ in 0..n_ops {
        report.ops += 1;
        let pick = |rng: &mut ChaCha8Rng, live: &[ObjectHandle]| {
            (!live.is_empty()).then(|| live[rng.gen_range(0..live.len())])
        };
        match rng.gen_range(0..100) {
            0..=17 => {
                let n = object_size(&mut rng, max_object);
                let data = payload(&mut rng, n);
                if let Ok(h) = heap.alloc(&data) {
                    live.push(h);
                    shadow.insert(h, data);
                }
            }
            18..=27 => {
                if let Some(h) = pick(&mut rng, &live) {
                    if heap.dealloc(h).is_ok() {
                        live.retain(|x| *x != h);
                        shadow.remove(&h);
                    }
                }
            }
            28..=52 => {
                if let Some(h) = pick(&mut rng, &live) {
                    if let Ok(g) = heap.get_ref(h) {
                        if *g != shadow[&h][..] {
                            report.shadow_mismatches += 1;
                        }
                        if rng.gen_bool(0.1) && held.len() < 3 {
                            held.push(Held::R(h, g));
                        }
                    }
                }
            }
            53..=82 => {
                if let Some(h) = pick(&mut rng, &live) {
                    if let Ok(mut g) = heap.get_mut(h) {
                        if *g != shadow[&h][..] {
                            report.shadow_mismatches += 1;
                        }
                        let i = rng.gen_range(0..g.len().max(1));
                        if !g.is_empty() {
                            g[i] = rng.gen();
                            shadow.get_mut(&h).unwrap()[i] = g[i];
                        }
                        if rng.gen_bool(0.1) && held.len() < 3 {
                            held.push(Held::W(h, g));
                        }
                    }
                }
            }
            83..=92 => {
                if !held.is_empty() {
                    held.remove(rng.gen_range(0..held.len()));
                }
            }
            93..=95 => {
                if let Some(h) = pick(&mut rng, &live) {
                    let _ = heap.evict(h);
                }
            }
            _ => {
                heap.with_storage(|s| s.arm_power_failure(bound));
                match heap.persist() {
                    Ok(r) => {
                        report.persists += 1;
                        report.max_persist_words = report.max_persist_words.max(r.words_transferred);
                        if r.words_transferred > bound {
                            report.bound_violations += 1;
                        }
                    }
                    Err(HeapError::Storage(StorageError::PowerFailureInjected)) => {
                        report.injected_faults += 1;
                    }
                    Err(e) => panic!("persist failed: {e}"),
                }
                heap.with_storage(|s| s.disarm_power_failure());
            }
        }
        let dirty = heap.stats().dirty_bytes;
        report.max_dirty = report.max_dirty.max(dirty);
        if dirty > limit {
            report.dirty_violations += 1;
        }
        if dirty != recompute_dirty(&heap) {
            report.accounting_mismatches += 1;
        }
        for g in &held {
            let ok = match g {
                Held::R(h, g) => **g == shadow[h][..],
                Held::W(h, g) => **g == shadow[h][..],
            };
            if !ok {
                report.shadow_mismatches += 1;
            }
        }
    }
    drop(held);
    for h in &live {
        match heap.get_ref(*h) {
            Ok(g) if *g == shadow[h][..] => {}
            _ => report.shadow_mismatches += 1,
        }
    }
    report
}

/// Runs `traces` independent traces with consecutive seeds.
pub fn run_dirty_traces(seed: u64, traces: u64, n_ops: u64, config: HeapConfig) -> TraceReport {
    let mut total = TraceReport::default();
    for i in 0..traces {
        total.merge(&run_dirty_trace(seed.wrapping_add(i), n_ops, config));
    }
    total
}

/// Outcome of randomized guard-contract attempts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuardReport {
    pub attempts: u64,
    /// Second write guard refused while one was live.
    pub second_writer_refused: u64,
    /// Write guard refused while read guards were live.
    pub writer_with_readers_refused: u64,
    /// Read guard refused while a write guard was live.
    pub reader_with_writer_refused: u64,
    /// Handles used after dealloc that were rejected.
    pub stale_use_rejected: u64,
    /// Victim selections checked against the pinned set.
    pub victim_checks: u64,
    pub violations: Vec<String>,
}

impl GuardReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Randomly takes, releases and abuses guards, checking every outcome
/// against a reader/writer model of each object.
pub fn run_guard_suite(seed: u64, attempts: u64) -> GuardReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = HeapConfig::new(4096, 4096);
    let heap = VnvHeap::init(SimulatedNvm::default(), config).expect("valid config");
    let mut report = GuardReport::default();
    let mut live: Vec<ObjectHandle> = (0..12)
        .map(|i| heap.alloc(&[i as u8; 200]).unwrap())
        .collect();
    let mut dead: Vec<ObjectHandle> = Vec::new();
    let mut held: Vec<Held> = Vec::new();
    let mut offsets: HashMap<ObjectHandle, usize> = HashMap::new();

    for step in 0..attempts {
        report.attempts += 1;
        let x = live[rng.gen_range(0..live.len())];
        let readers = held
            .iter()
            .filter(|g| matches!(g, Held::R(h, _) if *h == x))
            .count();
        let writers = held
            .iter()
            .filter(|g| matches!(g, Held::W(h, _) if *h == x))
            .count();
        let mut violation = |what: String| report.violations.push(format!("step {step}: {what}"));
        match rng.gen_range(0..10) {
            0..=2 => match heap.get_mut(x) {
                Ok(g) => {
                    if readers + writers > 0 {
                        violation(format!("write guard granted with {readers} readers, {writers} writers"));
                    }
                    if held.len() < 8 {
                        held.push(Held::W(x, g));
                    }
                }
                Err(HeapError::GuardActive) => {
                    if writers > 0 {
                        report.second_writer_refused += 1;
                    } else if readers > 0 {
                        report.writer_with_readers_refused += 1;
                    } else {
                        violation("get_mut refused without live guards".into());
                    }
                }
                Err(e) => violation(format!("get_mut: {e}")),
            },
            3..=5 => match heap.get_ref(x) {
                Ok(g) => {
                    if writers > 0 {
                        violation("read guard granted during write guard".into());
                    }
                    if held.len() < 8 {
                        held.push(Held::R(x, g));
                    }
                }
                Err(HeapError::WriteGuardActive) => {
                    if writers == 0 {
                        violation("get_ref refused without a write guard".into());
                    }
                    report.reader_with_writer_refused += 1;
                }
                Err(e) => violation(format!("get_ref: {e}")),
            },
            6 | 7 => {
                if !held.is_empty() {
                    held.remove(rng.gen_range(0..held.len()));
                }
            }
            8 => match heap.dealloc(x) {
                Ok(()) => {
                    if readers + writers > 0 {
                        violation("dealloc succeeded while pinned".into());
                    }
                    live.retain(|h| *h != x);
                    dead.push(x);
                    let fresh = heap.alloc(&[step as u8; 200]).unwrap();
                    live.push(fresh);
                }
                Err(HeapError::StillPinned) => {
                    if readers + writers == 0 {
                        violation("dealloc refused without guards".into());
                    }
                }
                Err(e) => violation(format!("dealloc: {e}")),
            },
            _ => {
                if let Some(&d) = dead.last() {
                    let rejected = matches!(heap.get_ref(d), Err(HeapError::InvalidHandle))
                        && matches!(heap.get_mut(d), Err(HeapError::InvalidHandle))
                        && matches!(heap.dealloc(d), Err(HeapError::InvalidHandle));
                    if rejected {
                        report.stale_use_rejected += 1;
                    } else {
                        violation("stale handle accepted".into());
                    }
                }
                // a big allocation forces evictions around the pinned set
                let _ = heap.alloc(&[0xee; 1500]).map(|h| heap.dealloc(h));
            }
        }

        let pinned: Vec<ObjectHandle> = held.iter().map(Held::handle).collect();
        for shortage in [Shortage::Cache(2048), Shortage::Cache(4096), Shortage::Dirty(4096)] {
            report.victim_checks += 1;
            if let Ok(victims) = heap.choose_victims(shortage) {
                if victims.iter().any(|v| pinned.contains(v)) {
                    report
                        .violations
                        .push(format!("step {step}: pinned object chosen as victim"));
                }
            }
        }
        for (h, m) in heap.metas() {
            let r = held
                .iter()
                .filter(|g| matches!(g, Held::R(y, _) if *y == h))
                .count() as u32;
            let w = held.iter().any(|g| matches!(g, Held::W(y, _) if *y == h));
            if (m.readers, m.writer) != (r, w) || (m.writer && m.readers > 0) {
                report
                    .violations
                    .push(format!("step {step}: guard counts {m:?} vs model ({r}, {w})"));
            }
            if m.pinned {
                let off = m.cache_offset.expect("pinned objects are resident");
                if let Some(&prev) = offsets.get(&h) {
                    if prev != off {
                        report
                            .violations
                            .push(format!("step {step}: pinned object moved"));
                    }
                }
                offsets.insert(h, off);
            } else {
                offsets.remove(&h);
            }
        }
    }
    report
}

/// Total-variation distance between `draws` unequal-pattern samples and the
/// normalized weights.
pub fn unequal_tv_distance(n_keys: usize, draws: usize, seed: u64) -> f64 {
    let weights: Vec<f64> = (0..n_keys).map(unequal_weight).collect();
    let total: f64 = weights.iter().sum();
    let mut counts = vec![0u64; n_keys];
    for k in gen_access_sequence(AccessPattern::Unequal, n_keys, draws, seed) {
        counts[k] += 1;
    }
    0.5 * counts
        .iter()
        .zip(&weights)
        .map(|(&c, &w)| (c as f64 / draws as f64 - w / total).abs())
        .sum::<f64>()
}
