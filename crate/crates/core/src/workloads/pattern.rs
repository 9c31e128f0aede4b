use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessPattern {
    Sequential,
    Unequal,
    RandomUniform,
}

impl AccessPattern {
    pub const ALL: [AccessPattern; 3] = [
        AccessPattern::Sequential,
        AccessPattern::Unequal,
        AccessPattern::RandomUniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AccessPattern::Sequential => "sequential",
            AccessPattern::Unequal => "unequal",
            AccessPattern::RandomUniform => "random",
        }
    }
}

impl fmt::Display for AccessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown access pattern {0:?} (expected sequential, unequal or random)")]
pub struct ParsePatternError(String);

impl FromStr for AccessPattern {
    type Err = ParsePatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(AccessPattern::Sequential),
            "unequal" => Ok(AccessPattern::Unequal),
            "random" | "uniform" => Ok(AccessPattern::RandomUniform),
            _ => Err(ParsePatternError(s.to_owned())),
        }
    }
}

/// Unnormalized access weight of `key` under the unequal pattern.
pub fn unequal_weight(key: usize) -> f64 {
    (5.0 / 32.0 * key as f64).sin().powi(4) + 0.1
}

/// Keys to access, deterministic in `seed`.
pub fn gen_access_sequence(
    pattern: AccessPattern,
    n_keys: usize,
    n_ops: usize,
    seed: u64,
) -> Vec<usize> {
    assert!(n_keys > 0, "need at least one key");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match pattern {
        AccessPattern::Sequential => (0..n_ops).map(|i| i % n_keys).collect(),
        AccessPattern::Unequal => {
            let dist = WeightedIndex::new((0..n_keys).map(unequal_weight)).unwrap();
            dist.sample_iter(&mut rng).take(n_ops).collect()
        }
        AccessPattern::RandomUniform => Uniform::new(0, n_keys)
            .sample_iter(&mut rng)
            .take(n_ops)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_wraps() {
        let s = gen_access_sequence(AccessPattern::Sequential, 256, 512, 0);
        let want: Vec<usize> = (0..256).chain(0..256).collect();
        assert_eq!(s, want);
    }

    #[test]
    fn weight_at_zero() {
        assert_eq!(unequal_weight(0), 0.1);
        let peak = (16.0 * std::f64::consts::PI / 5.0).round() as usize;
        assert!(unequal_weight(peak) > 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        for p in AccessPattern::ALL {
            assert_eq!(
                gen_access_sequence(p, 256, 1000, 7),
                gen_access_sequence(p, 256, 1000, 7)
            );
        }
        assert_ne!(
            gen_access_sequence(AccessPattern::Unequal, 256, 1000, 7),
            gen_access_sequence(AccessPattern::Unequal, 256, 1000, 8)
        );
    }

    #[test]
    fn parse_names() {
        for p in AccessPattern::ALL {
            assert_eq!(p.name().parse::<AccessPattern>().unwrap(), p);
        }
        assert!("zipf".parse::<AccessPattern>().is_err());
    }

    #[test]
    fn uniform_in_range() {
        let s = gen_access_sequence(AccessPattern::RandomUniform, 10, 10_000, 1);
        assert!(s.iter().all(|&k| k < 10));
        for k in 0..10 {
            let n = s.iter().filter(|&&x| x == k).count();
            assert!((800..1200).contains(&n), "{k}: {n}");
        }
    }
}
