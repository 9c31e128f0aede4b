use std::io::Write;

use serde::Serialize;
use vnv_core::{CostMeter, EnergyModel};

/// One measurement row. Word counts are totals over `reps`; time and energy
/// are per repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct BenchRecord {
    pub benchmark: String,
    pub backend: String,
    pub case: String,
    pub object_size: Option<usize>,
    pub cache_size: Option<usize>,
    pub dirty_limit: Option<usize>,
    pub page_size: Option<usize>,
    pub pattern: Option<String>,
    pub queue_len: Option<usize>,
    pub seed: Option<u64>,
    pub metadata_bytes: Option<usize>,
    pub words_read: u64,
    pub words_written: u64,
    pub time_us: f64,
    pub energy_uj: f64,
    pub reps: u64,
}

impl BenchRecord {
    pub fn new(benchmark: &str, backend: &str, case: &str) -> Self {
        BenchRecord {
            benchmark: benchmark.into(),
            backend: backend.into(),
            case: case.into(),
            reps: 1,
            ..Default::default()
        }
    }

    /// Sets the word counts and derives time and energy from `model`.
    pub fn with_cost(mut self, cost: CostMeter, reps: u64, model: &EnergyModel) -> Self {
        assert!(reps > 0);
        self.words_read = cost.words_read;
        self.words_written = cost.words_written;
        self.reps = reps;
        self.rederive(model);
        self
    }

    pub fn rederive(&mut self, model: &EnergyModel) {
        let total = self.words_read + self.words_written;
        self.time_us = model.time_us(total) / self.reps as f64;
        self.energy_uj = model.energy_uj(total) / self.reps as f64;
    }

    pub fn total_words(&self) -> u64 {
        self.words_read + self.words_written
    }

    pub fn words_per_op(&self) -> f64 {
        self.total_words() as f64 / self.reps as f64
    }
}

/// Writes records as CSV with a fixed header.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        CsvSink {
            writer: csv::Writer::from_writer(out),
        }
    }

    pub fn write(&mut self, record: &BenchRecord) -> csv::Result<()> {
        self.writer.serialize(record)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_derivation() {
        let model = EnergyModel::default();
        let r = BenchRecord::new("access", "vnv", "bad").with_cost(
            CostMeter {
                words_read: 8,
                words_written: 0,
            },
            1,
            &model,
        );
        assert_eq!(r.time_us, 8.0);
        assert!((r.energy_uj - 8.0 * 0.132).abs() < 1e-12);
        let mut sink = CsvSink::new(Vec::new());
        sink.write(&r).unwrap();
        let text = String::from_utf8(sink.finish().unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "benchmark,backend,case,object_size,cache_size,dirty_limit,page_size,pattern,\
             queue_len,seed,metadata_bytes,words_read,words_written,time_us,energy_uj,reps"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("access,vnv,bad,,"));
    }
}
