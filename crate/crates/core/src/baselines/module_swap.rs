use crate::storage::{StorageDevice, StorageError};

/// Module size used by the reference-retrieval comparison.
pub const MODULE_SIZE: usize = 1024;

/// An application split by hand into fixed-size modules, exactly one of
/// which is in RAM. Switching writes the active module back in full and
/// loads the target in full.
pub struct ModuleSwapApp<S> {
    storage: S,
    ram: Vec<u8>,
    module_size: usize,
    modules: usize,
    active: usize,
}

impl<S: StorageDevice> ModuleSwapApp<S> {
    /// Starts with module 0 resident. Module `i` lives at `i * module_size`.
    pub fn new(storage: S, modules: usize, module_size: usize) -> Result<Self, StorageError> {
        assert!(modules > 0 && module_size > 0);
        if modules * module_size > storage.capacity() {
            return Err(StorageError::OutOfRange {
                offset: 0,
                len: modules * module_size,
                capacity: storage.capacity(),
            });
        }
        Ok(ModuleSwapApp {
            storage,
            ram: vec![0; module_size],
            module_size,
            modules,
            active: 0,
        })
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn modules(&self) -> usize {
        self.modules
    }

    pub fn storage(&self) -> &S {
        &self.storage
    }

    /// Makes `target` resident and returns the words this access cost.
    /// `len` and the access mode do not matter: modules move as a whole.
    pub fn access(&mut self, target: usize) -> Result<u64, StorageError> {
        assert!(target < self.modules, "module {target} out of range");
        if target == self.active {
            return Ok(0);
        }
        let start = self.storage.meter();
        self.storage
            .write(self.active * self.module_size, &self.ram)?;
        self.storage
            .read(target * self.module_size, &mut self.ram)?;
        self.active = target;
        Ok(self.storage.meter().since(&start).total())
    }

    /// The resident module's bytes.
    pub fn ram(&mut self) -> &mut [u8] {
        &mut self.ram
    }
}
