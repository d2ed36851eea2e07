//! Running zero-fraction statistics.

use serde::{Deserialize, Serialize};

use super::{GradBundle, ZeroCounts};
use crate::tensor::Real;

/// Running mean and variance (Welford) of per-example zero fractions for the
/// conv, tree and fc stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub sample_count: u64,
    mean: [f64; 3],
    m2: [f64; 3],
}

impl SparsityStats {
    pub fn push(&mut self, counts: &ZeroCounts) {
        self.sample_count += 1;
        let n = self.sample_count as f64;
        for (i, x) in counts.fractions().into_iter().enumerate() {
            let d = x - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x - self.mean[i]);
        }
    }

    /// Combines two summaries (Chan et al. parallel update).
    pub fn merge(&mut self, other: &SparsityStats) {
        if other.sample_count == 0 {
            return;
        }
        if self.sample_count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.sample_count as f64, other.sample_count as f64);
        let n = na + nb;
        for i in 0..3 {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.sample_count += other.sample_count;
    }

    /// Mean zero fraction per stage (conv, tree, fc).
    pub fn fraction_zero(&self) -> [f64; 3] {
        self.mean
    }

    /// Sample standard deviation per stage; zero with fewer than two samples.
    pub fn std(&self) -> [f64; 3] {
        if self.sample_count < 2 {
            return [0.0; 3];
        }
        self.m2.map(|m| (m / (self.sample_count - 1) as f64).sqrt())
    }
}

pub fn accumulate_sparsity<T: Real>(mut stats: SparsityStats, bundle: &GradBundle<T>) -> SparsityStats {
    stats.push(&bundle.zero_counts);
    stats
}
