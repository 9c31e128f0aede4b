use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The key-value store object population: counts and sizes per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub classes: Vec<(usize, usize)>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            classes: vec![(64, 32), (128, 128), (32, 256), (32, 1024)],
        }
    }
}

impl WorkloadSpec {
    pub fn object_count(&self) -> usize {
        self.classes.iter().map(|&(n, _)| n).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.classes.iter().map(|&(n, s)| n * s).sum()
    }

    /// A fifth of the payload bytes.
    pub fn dirty_limit(&self) -> usize {
        self.total_bytes() / 5
    }

    /// Value size of each key, in insertion order. Key `k` is the `k`-th
    /// object inserted; which size it gets is shuffled by `seed`.
    pub fn key_sizes(&self, seed: u64) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .classes
            .iter()
            .flat_map(|&(n, s)| std::iter::repeat_n(s, n))
            .collect();
        sizes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        sizes
    }
}
