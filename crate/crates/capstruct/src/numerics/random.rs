//! Seeded random source with deterministic child-stream derivation.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

/// Deterministic random source. Identical seed and draw sequence produce
/// identical outputs. Instances are single-owner; parallel workflows derive
/// one child per task from `(parent seed, task index)` so results do not
/// depend on scheduling.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(mix(seed)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child source for task `index`, derived from the parent seed only
    /// (not the parent's stream position).
    pub fn child(&self, index: u64) -> RandomSource {
        RandomSource::new(mix(self.seed ^ mix(index.wrapping_add(1))))
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return mean;
        }
        Normal::new(mean, sd).expect("finite sd").sample(&mut self.rng)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random_range(0.0..1.0)
    }

    /// Student-t draw with `df` degrees of freedom.
    pub fn student_t(&mut self, df: f64) -> f64 {
        StudentT::new(df).expect("positive df").sample(&mut self.rng)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        self.rng.random_range(0..n)
    }
}
