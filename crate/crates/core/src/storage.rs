//! Word-granular non-volatile storage with deterministic transfer accounting.
//!
//! Every transfer is charged in 4-byte words, one word per emulated SPI call.
//! Command and address overhead is not modelled. A [`FaultPlan`] can cut
//! power after a fixed number of words; words are the crash granularity, so
//! an interrupted write leaves every completed word durable and the failing
//! word untouched.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Bytes per transferred word.
pub const WORD_BYTES: usize = 4;

/// Default simulated capacity (4 Mbit FRAM class).
pub const DEFAULT_CAPACITY: usize = 512 * 1024;

/// Number of words charged for a transfer of `len` bytes.
pub const fn words_for(len: usize) -> u64 {
    len.div_ceil(WORD_BYTES) as u64
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("access [{offset}, {offset}+{len}) outside device of {capacity} bytes")]
    OutOfRange {
        offset: usize,
        len: usize,
        capacity: usize,
    },
    #[error("injected power failure")]
    PowerFailureInjected,
    #[error("backing file: {0}")]
    Io(#[from] std::io::Error),
}

/// Running word counters. Monotone until explicitly reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CostMeter {
    pub words_read: u64,
    pub words_written: u64,
}

impl CostMeter {
    pub fn total(&self) -> u64 {
        self.words_read + self.words_written
    }

    /// Difference between this snapshot and an `earlier` one of the same meter.
    pub fn since(&self, earlier: &CostMeter) -> CostMeter {
        CostMeter {
            words_read: self.words_read - earlier.words_read,
            words_written: self.words_written - earlier.words_written,
        }
    }
}

/// Power-failure injection: the `(budget_words + 1)`-th word transfer fails.
///
/// Once tripped, the plan stays tripped and every later transfer fails until
/// the device is rebooted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub budget_words: u64,
    tripped: bool,
}

impl FaultPlan {
    pub fn new(budget_words: u64) -> Self {
        FaultPlan {
            budget_words,
            tripped: false,
        }
    }

    pub fn tripped(&self) -> bool {
        self.tripped
    }

    /// Admits up to `words` transfers and returns how many may complete.
    fn admit(&mut self, words: u64) -> u64 {
        if self.tripped {
            return 0;
        }
        let granted = words.min(self.budget_words);
        self.budget_words -= granted;
        if granted < words {
            self.tripped = true;
        }
        granted
    }
}

/// A byte-addressable non-volatile device with word-granular cost accounting.
pub trait StorageDevice {
    fn capacity(&self) -> usize;

    /// Reads `buf.len()` bytes starting at `offset`.
    fn read(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), StorageError>;

    /// Writes `data` at `offset`. With an armed fault plan the completed
    /// prefix words are durable even when an error is returned.
    fn write(&mut self, offset: usize, data: &[u8]) -> Result<(), StorageError>;

    fn meter(&self) -> CostMeter;

    fn reset_meter(&mut self);

    fn arm_power_failure(&mut self, budget_words: u64);

    fn disarm_power_failure(&mut self);

    fn fault_plan(&self) -> Option<FaultPlan>;

    fn read_vec(&mut self, offset: usize, len: usize) -> Result<Vec<u8>, StorageError> {
        let mut buf = vec![0; len];
        self.read(offset, &mut buf)?;
        Ok(buf)
    }
}

impl<D: StorageDevice + ?Sized> StorageDevice for Box<D> {
    fn capacity(&self) -> usize {
        (**self).capacity()
    }
    fn read(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), StorageError> {
        (**self).read(offset, buf)
    }
    fn write(&mut self, offset: usize, data: &[u8]) -> Result<(), StorageError> {
        (**self).write(offset, data)
    }
    fn meter(&self) -> CostMeter {
        (**self).meter()
    }
    fn reset_meter(&mut self) {
        (**self).reset_meter()
    }
    fn arm_power_failure(&mut self, budget_words: u64) {
        (**self).arm_power_failure(budget_words)
    }
    fn disarm_power_failure(&mut self) {
        (**self).disarm_power_failure()
    }
    fn fault_plan(&self) -> Option<FaultPlan> {
        (**self).fault_plan()
    }
}

/// Bounds check plus fault admission shared by the device implementations.
/// Returns the number of bytes that may be transferred before power is cut.
#[derive(Debug, Default)]
struct TransferGate {
    meter: CostMeter,
    plan: Option<FaultPlan>,
}

impl TransferGate {
    fn check(&self, capacity: usize, offset: usize, len: usize) -> Result<(), StorageError> {
        match offset.checked_add(len) {
            Some(end) if end <= capacity => Ok(()),
            _ => Err(StorageError::OutOfRange {
                offset,
                len,
                capacity,
            }),
        }
    }

    /// Returns the number of whole words admitted for a `len`-byte transfer.
    fn admit(&mut self, len: usize) -> (u64, bool) {
        let words = words_for(len);
        let granted = match self.plan.as_mut() {
            Some(plan) => plan.admit(words),
            None => words,
        };
        (granted, granted == words)
    }
}

/// In-memory NVM image. Survives "reboots" for as long as the value lives;
/// [`SimulatedNvm::into_image`] and [`SimulatedNvm::from_image`] carry it
/// across heap instances.
#[derive(Debug)]
pub struct SimulatedNvm {
    bytes: Vec<u8>,
    gate: TransferGate,
}

impl SimulatedNvm {
    pub fn new(capacity: usize) -> Self {
        SimulatedNvm {
            bytes: vec![0; capacity],
            gate: TransferGate::default(),
        }
    }

    pub fn from_image(image: Vec<u8>) -> Self {
        SimulatedNvm {
            bytes: image,
            gate: TransferGate::default(),
        }
    }

    pub fn image(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_image(self) -> Vec<u8> {
        self.bytes
    }

    /// Power-cycles the device: contents survive, the fault plan and cost
    /// meter are cleared.
    pub fn reboot(&mut self) {
        self.gate = TransferGate::default();
    }
}

impl Default for SimulatedNvm {
    fn default() -> Self {
        SimulatedNvm::new(DEFAULT_CAPACITY)
    }
}

impl StorageDevice for SimulatedNvm {
    fn capacity(&self) -> usize {
        self.bytes.len()
    }

    fn read(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), StorageError> {
        self.gate.check(self.bytes.len(), offset, buf.len())?;
        let (granted, complete) = self.gate.admit(buf.len());
        let n = (granted as usize * WORD_BYTES).min(buf.len());
        buf[..n].copy_from_slice(&self.bytes[offset..offset + n]);
        self.gate.meter.words_read += granted;
        if complete {
            Ok(())
        } else {
            Err(StorageError::PowerFailureInjected)
        }
    }

    fn write(&mut self, offset: usize, data: &[u8]) -> Result<(), StorageError> {
        self.gate.check(self.bytes.len(), offset, data.len())?;
        let (granted, complete) = self.gate.admit(data.len());
        let n = (granted as usize * WORD_BYTES).min(data.len());
        self.bytes[offset..offset + n].copy_from_slice(&data[..n]);
        self.gate.meter.words_written += granted;
        if complete {
            Ok(())
        } else {
            Err(StorageError::PowerFailureInjected)
        }
    }

    fn meter(&self) -> CostMeter {
        self.gate.meter
    }

    fn reset_meter(&mut self) {
        self.gate.meter = CostMeter::default();
    }

    fn arm_power_failure(&mut self, budget_words: u64) {
        self.gate.plan = Some(FaultPlan::new(budget_words));
    }

    fn disarm_power_failure(&mut self) {
        self.gate.plan = None;
    }

    fn fault_plan(&self) -> Option<FaultPlan> {
        self.gate.plan
    }
}

/// NVM image backed by a raw file (little-endian bytes, no header).
#[derive(Debug)]
pub struct FileBackedNvm {
    path: PathBuf,
    file: File,
    capacity: usize,
    gate: TransferGate,
}

impl FileBackedNvm {
    /// Opens `path`, creating it zero-filled at `capacity` bytes if missing.
    /// An existing file keeps its contents and is extended if shorter.
    pub fn open(path: impl AsRef<Path>, capacity: usize) -> Result<Self, StorageError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        if (file.metadata()?.len() as usize) < capacity {
            file.set_len(capacity as u64)?;
        }
        Ok(FileBackedNvm {
            path,
            file,
            capacity,
            gate: TransferGate::default(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn flush(&mut self) -> Result<(), StorageError> {
        self.file.sync_data()?;
        Ok(())
    }
}

impl StorageDevice for FileBackedNvm {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn read(&mut self, offset: usize, buf: &mut [u8]) -> Result<(), StorageError> {
        self.gate.check(self.capacity, offset, buf.len())?;
        let (granted, complete) = self.gate.admit(buf.len());
        let n = (granted as usize * WORD_BYTES).min(buf.len());
        self.file.seek(SeekFrom::Start(offset as u64))?;
        self.file.read_exact(&mut buf[..n])?;
        self.gate.meter.words_read += granted;
        if complete {
            Ok(())
        } else {
            Err(StorageError::PowerFailureInjected)
        }
    }

    fn write(&mut self, offset: usize, data: &[u8]) -> Result<(), StorageError> {
        self.gate.check(self.capacity, offset, data.len())?;
        let (granted, complete) = self.gate.admit(data.len());
        let n = (granted as usize * WORD_BYTES).min(data.len());
        self.file.seek(SeekFrom::Start(offset as u64))?;
        self.file.write_all(&data[..n])?;
        self.gate.meter.words_written += granted;
        if complete {
            Ok(())
        } else {
            Err(StorageError::PowerFailureInjected)
        }
    }

    fn meter(&self) -> CostMeter {
        self.gate.meter
    }

    fn reset_meter(&mut self) {
        self.gate.meter = CostMeter::default();
    }

    fn arm_power_failure(&mut self, budget_words: u64) {
        self.gate.plan = Some(FaultPlan::new(budget_words));
    }

    fn disarm_power_failure(&mut self) {
        self.gate.plan = None;
    }

    fn fault_plan(&self) -> Option<FaultPlan> {
        self.gate.plan
    }
}
