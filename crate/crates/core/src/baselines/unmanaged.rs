use crate::storage::{words_for, StorageDevice, StorageError};

/// RAM with no tracking at all: a checkpoint copies the whole region.
#[derive(Debug, Clone)]
pub struct UnmanagedRam {
    ram: Vec<u8>,
}

impl UnmanagedRam {
    pub fn new(ram_size: usize) -> Self {
        UnmanagedRam {
            ram: vec![0; ram_size],
        }
    }

    pub fn ram_size(&self) -> usize {
        self.ram.len()
    }

    pub fn ram(&mut self) -> &mut [u8] {
        &mut self.ram
    }

    pub fn checkpoint_words(&self) -> u64 {
        words_for(self.ram.len())
    }

    /// Copies the region to `storage` at `offset`; returns the words written.
    pub fn checkpoint<S: StorageDevice>(
        &self,
        storage: &mut S,
        offset: usize,
    ) -> Result<u64, StorageError> {
        storage.write(offset, &self.ram)?;
        Ok(self.checkpoint_words())
    }
}
