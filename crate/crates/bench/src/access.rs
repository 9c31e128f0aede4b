//! Reference retrieval: one `get_ref` staged into its best, bad or worst
//! case, against a hand-partitioned module-swapping application.

use std::fmt;
use std::str::FromStr;

use vnv_core::baselines::{ModuleSwapApp, MODULE_SIZE};
use vnv_core::{CostMeter, EnergyModel, HeapConfig, HeapError, SimulatedNvm, StorageDevice, VnvHeap};

use crate::BenchRecord;

/// RAM given to both systems: one maximum-size object plus its metadata.
pub const ACCESS_RAM: usize = 1056;

/// Largest object either system handles.
pub const MAX_OBJECT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessCase {
    Best,
    Bad,
    Worst,
}

impl AccessCase {
    pub const ALL: [AccessCase; 3] = [AccessCase::Best, AccessCase::Bad, AccessCase::Worst];

    pub fn name(&self) -> &'static str {
        match self {
            AccessCase::Best => "best",
            AccessCase::Bad => "bad",
            AccessCase::Worst => "worst",
        }
    }
}

impl fmt::Display for AccessCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AccessCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(AccessCase::Best),
            "bad" => Ok(AccessCase::Bad),
            "worst" => Ok(AccessCase::Worst),
            _ => Err(format!("unknown case {s:?} (expected best, bad or worst)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessBackend {
    Vnv,
    Module,
}

impl AccessBackend {
    pub fn name(&self) -> &'static str {
        match self {
            AccessBackend::Vnv => "vnv",
            AccessBackend::Module => "module",
        }
    }
}

impl FromStr for AccessBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vnv" => Ok(AccessBackend::Vnv),
            "module" => Ok(AccessBackend::Module),
            _ => Err(format!("unknown access backend {s:?} (expected vnv or module)")),
        }
    }
}

fn vnv_access(case: AccessCase, object_size: usize) -> Result<CostMeter, HeapError> {
    let heap = VnvHeap::init(
        SimulatedNvm::default(),
        HeapConfig::new(ACCESS_RAM, ACCESS_RAM),
    )?;
    let target = heap.alloc(&vec![0x5a; object_size])?;
    match case {
        AccessCase::Best => {
            heap.persist()?;
        }
        AccessCase::Bad => {
            heap.persist()?;
            heap.evict(target)?;
        }
        AccessCase::Worst => {
            heap.persist()?;
            heap.evict(target)?;
            // a maximum-size modified object occupies the cache
            let filler = heap.alloc(&vec![0xa5; MAX_OBJECT])?;
            heap.persist()?;
            drop(heap.get_mut(filler)?);
        }
    }
    let before = heap.cost();
    drop(heap.get_ref(target)?);
    Ok(heap.cost().since(&before))
}

fn module_access(case: AccessCase) -> CostMeter {
    let mut app = ModuleSwapApp::new(SimulatedNvm::default(), 2, MODULE_SIZE).unwrap();
    let before = app.storage().meter();
    let target = match case {
        AccessCase::Best => 0,
        AccessCase::Bad | AccessCase::Worst => 1,
    };
    app.access(target).unwrap();
    app.storage().meter().since(&before)
}

pub fn run_access_bench(
    case: AccessCase,
    object_size: usize,
    backend: AccessBackend,
    model: &EnergyModel,
) -> anyhow::Result<BenchRecord> {
    anyhow::ensure!(
        (1..=MAX_OBJECT).contains(&object_size),
        "object size must be in 1..={MAX_OBJECT}"
    );
    let cost = match backend {
        AccessBackend::Vnv => vnv_access(case, object_size)?,
        AccessBackend::Module => module_access(case),
    };
    let mut r = BenchRecord::new("access", backend.name(), case.name()).with_cost(cost, 1, model);
    r.object_size = Some(object_size);
    r.cache_size = Some(ACCESS_RAM);
    r.dirty_limit = Some(ACCESS_RAM);
    Ok(r)
}
