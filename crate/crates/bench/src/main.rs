use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use vnv_bench::access::{run_access_bench, AccessBackend, AccessCase};
use vnv_bench::check::{run_dirty_traces, run_guard_suite, unequal_tv_distance};
use vnv_bench::crash::{run_crash_suite, sweep_torn_persists};
use vnv_bench::kvs::{parse_backend, run_kvs_bench, DEFAULT_OPS};
use vnv_bench::persist::{run_persist_bench, PersistMode, LIMITS, RAM_SIZES};
use vnv_bench::queue::{run_queue_bench, QueueBackend, DEFAULT_REPS};
use vnv_bench::{BenchRecord, CsvSink};
use vnv_core::workloads::AccessPattern;
use vnv_core::{EnergyModel, HeapConfig};

#[derive(Parser)]
#[command(name = "vnvbench", version, about = "Benchmarks and checks for the vNV heap")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Power drawn while transferring, in mW.
    #[arg(long, global = true, default_value_t = 132.0)]
    power_mw: f64,
    /// Latency of one 4-byte transfer, in microseconds.
    #[arg(long, global = true, default_value_t = 1.0)]
    word_latency_us: f64,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Cost of one object access in the best, bad and worst cases.
    Access {
        #[arg(long, default_value = "best")]
        case: AccessCase,
        #[arg(long, default_value_t = 256)]
        object_size: usize,
        #[arg(long, default_value = "vnv")]
        backend: AccessBackend,
    },
    /// Push+pop cost against the number of queued 256-byte elements.
    Queue {
        #[arg(long, default_value_t = 0)]
        len: usize,
        #[arg(long, default_value = "vnv")]
        backend: QueueBackend,
        #[arg(long, default_value_t = 4096)]
        cache_size: usize,
        #[arg(long, default_value_t = 4096)]
        dirty_limit: usize,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: u64,
    },
    /// Checkpoint cost when the dirty budget is saturated.
    Persist {
        #[arg(long, default_value = "vary-limit")]
        mode: PersistMode,
        /// Swept values; defaults to the standard sweep for the mode.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Key-value store updates under an access pattern.
    Kvs {
        #[arg(long, default_value = "vnv")]
        backend: String,
        #[arg(long)]
        page_size: Option<usize>,
        #[arg(long, default_value = "random")]
        pattern: AccessPattern,
        #[arg(long, default_value_t = DEFAULT_OPS)]
        ops: usize,
    },
    /// Crash/restore iterations and the torn-checkpoint sweep.
    Crash {
        #[arg(long, default_value_t = 1000)]
        iterations: u64,
        #[arg(long, default_value_t = 2048)]
        cache_size: usize,
        #[arg(long, default_value_t = 1024)]
        dirty_limit: usize,
    },
    /// Randomized property checks of the dirty limit and the guard contract.
    Check {
        #[arg(long, default_value_t = 20)]
        traces: u64,
        #[arg(long, default_value_t = 5000)]
        ops: u64,
        #[arg(long, default_value_t = 4096)]
        cache_size: usize,
        #[arg(long, default_value_t = 2048)]
        dirty_limit: usize,
        #[arg(long, default_value_t = 10_000)]
        guard_attempts: u64,
    },
}

fn emit(out: &Option<PathBuf>, records: &[BenchRecord]) -> anyhow::Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = CsvSink::new(sink);
    for r in records {
        sink.write(r)?;
    }
    sink.finish()?.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let c = cli.common;
    anyhow::ensure!(
        c.power_mw > 0.0 && c.word_latency_us > 0.0,
        "power and latency must be positive"
    );
    let model = EnergyModel {
        power_mw: c.power_mw,
        word_latency_us: c.word_latency_us,
    };
    let records = match cli.command {
        Command::Access {
            case,
            object_size,
            backend,
        } => vec![run_access_bench(case, object_size, backend, &model)?],
        Command::Queue {
            len,
            backend,
            cache_size,
            dirty_limit,
            reps,
        } => vec![run_queue_bench(len, backend, cache_size, dirty_limit, reps, &model)?],
        Command::Persist { mode, values } => {
            let values = match (values.is_empty(), mode) {
                (false, _) => values,
                (true, PersistMode::VaryLimit) => LIMITS.to_vec(),
                (true, PersistMode::VaryRam) => RAM_SIZES.to_vec(),
            };
            run_persist_bench(mode, &values, &model)?
        }
        Command::Kvs {
            backend,
            page_size,
            pattern,
            ops,
        } => {
            let kind = parse_backend(&backend, page_size)?;
            vec![run_kvs_bench(kind, pattern, c.seed, ops, &model)?]
        }
        Command::Crash {
            iterations,
            cache_size,
            dirty_limit,
        } => {
            let report = run_crash_suite(c.seed, iterations);
            for f in &report.failures {
                eprintln!("crash: {f}");
            }
            let torn = sweep_torn_persists(cache_size, dirty_limit);
            let torn_ok = match &torn {
                Ok(out) => {
                    let committed = out.iter().filter(|t| !t.failure_reported).count();
                    println!(
                        "torn persists: {} budgets, {} committed",
                        out.len(),
                        committed
                    );
                    committed == 1
                }
                Err(e) => {
                    eprintln!("torn: {e}");
                    false
                }
            };
            println!(
                "crash iterations: {} run, {} failed",
                report.iterations,
                report.failures.len()
            );
            return Ok(report.passed() && torn_ok);
        }
        Command::Check {
            traces,
            ops,
            cache_size,
            dirty_limit,
            guard_attempts,
        } => {
            let config = HeapConfig::new(cache_size, dirty_limit);
            config.validate()?;
            let t = run_dirty_traces(c.seed, traces, ops, config);
            println!("dirty traces: {t:?}");
            let g = run_guard_suite(c.seed, guard_attempts);
            for v in g.violations.iter().take(20) {
                eprintln!("guard: {v}");
            }
            println!(
                "guard attempts: {}, violations {}",
                g.attempts,
                g.violations.len()
            );
            let tv = unequal_tv_distance(256, 1_000_000, c.seed);
            println!("unequal pattern TV distance: {tv:.4}");
            return Ok(t.passed() && g.passed() && tv <= 0.01);
        }
    };
    emit(&c.out, &records)?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
