//! Key-value store update latency and metadata size against page-granular
//! dirty tracking.

use std::str::FromStr;

use vnv_core::baselines::{ManagedStatePool, PAGE_SIZES};
use vnv_core::heap::cache_footprint;
use vnv_core::workloads::{gen_access_sequence, AccessPattern, KvBackend, MsKvs, VnvKvs, WorkloadSpec};
use vnv_core::{EnergyModel, HeapConfig, SimulatedNvm, VnvHeap};

use crate::BenchRecord;

pub const DEFAULT_OPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvsBackendKind {
    Vnv,
    ManagedState { page_size: usize },
}

impl KvsBackendKind {
    pub fn name(&self) -> &'static str {
        match self {
            KvsBackendKind::Vnv => "vnv",
            KvsBackendKind::ManagedState { .. } => "managed-state",
        }
    }
}

/// Parses `vnv` or `ms`/`managed-state`; the page size comes separately.
pub fn parse_backend(s: &str, page_size: Option<usize>) -> anyhow::Result<KvsBackendKind> {
    match s {
        "vnv" => Ok(KvsBackendKind::Vnv),
        "ms" | "managed-state" | "managed_state" => {
            let page_size =
                page_size.ok_or_else(|| anyhow::anyhow!("the managed-state backend needs --page-size"))?;
            anyhow::ensure!(
                PAGE_SIZES.contains(&page_size),
                "page size {page_size} is not one of {PAGE_SIZES:?}"
            );
            Ok(KvsBackendKind::ManagedState { page_size })
        }
        _ => anyhow::bail!("unknown kvs backend {s:?} (expected vnv or ms)"),
    }
}

impl FromStr for KvsBackendKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        parse_backend(s, None)
    }
}

/// Cache that holds the whole population at once.
pub fn vnv_cache_size(spec: &WorkloadSpec) -> usize {
    spec.classes
        .iter()
        .map(|&(n, s)| n * cache_footprint(s))
        .sum()
}

fn value(key: usize, size: usize, round: usize) -> Vec<u8> {
    (0..size).map(|i| (key * 13 + round * 7 + i) as u8).collect()
}

fn build(kind: KvsBackendKind, spec: &WorkloadSpec) -> anyhow::Result<Box<dyn KvBackend>> {
    let limit = spec.dirty_limit();
    Ok(match kind {
        KvsBackendKind::Vnv => {
            let cfg = HeapConfig::new(vnv_cache_size(spec), limit);
            Box::new(VnvKvs::new(VnvHeap::init(SimulatedNvm::default(), cfg)?))
        }
        KvsBackendKind::ManagedState { page_size } => {
            let pool =
                ManagedStatePool::new(SimulatedNvm::default(), spec.total_bytes(), page_size, limit)?;
            Box::new(MsKvs::new(pool))
        }
    })
}

/// Total update cost over `n_ops` updates after staging and a checkpoint.
pub fn measure_kvs(
    kind: KvsBackendKind,
    pattern: AccessPattern,
    seed: u64,
    n_ops: usize,
) -> anyhow::Result<(vnv_core::CostMeter, usize)> {
    let spec = WorkloadSpec::default();
    let sizes = spec.key_sizes(seed);
    let mut kv = build(kind, &spec)?;
    for (k, &s) in sizes.iter().enumerate() {
        kv.put(k as u32, &value(k, s, 0))?;
    }
    kv.checkpoint()?;
    kv.reset_cost();
    let keys = gen_access_sequence(pattern, sizes.len(), n_ops, seed);
    for (round, &k) in keys.iter().enumerate() {
        kv.update(k as u32, &value(k, sizes[k], round + 1))?;
    }
    let cost = kv.cost();
    Ok((cost, kv.metadata_bytes()))
}

pub fn run_kvs_bench(
    kind: KvsBackendKind,
    pattern: AccessPattern,
    seed: u64,
    n_ops: usize,
    model: &EnergyModel,
) -> anyhow::Result<BenchRecord> {
    anyhow::ensure!(n_ops > 0, "need at least one update");
    let spec = WorkloadSpec::default();
    let (cost, metadata) = measure_kvs(kind, pattern, seed, n_ops)?;
    let mut r = BenchRecord::new("kvs", kind.name(), "update").with_cost(cost, n_ops as u64, model);
    r.pattern = Some(pattern.name().into());
    r.seed = Some(seed);
    r.dirty_limit = Some(spec.dirty_limit());
    r.metadata_bytes = Some(metadata);
    match kind {
        KvsBackendKind::Vnv => r.cache_size = Some(vnv_cache_size(&spec)),
        KvsBackendKind::ManagedState { page_size } => {
            r.page_size = Some(page_size);
            r.cache_size = Some(spec.total_bytes());
        }
    }
    Ok(r)
}
