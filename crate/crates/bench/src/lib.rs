//! Benchmark harness for the vNV heap: the four evaluation families, the
//! crash suite and the randomized property suites, all over the simulated
//! word-cost model.

pub mod access;
pub mod check;
pub mod crash;
pub mod kvs;
pub mod persist;
pub mod queue;
pub mod record;

pub use record::{BenchRecord, CsvSink};
