//! 256-bin byte histograms shared by the sampler and the recovery passes.

/// Count histogram over byte values. Probabilities are derived on demand;
/// smoothing policy is left to the consumer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteDistribution {
    counts: [u64; 256],
    total: u64,
}

impl Default for ByteDistribution {
    fn default() -> Self {
        Self::new()
    }
}

impl ByteDistribution {
    pub fn new() -> Self {
        ByteDistribution { counts: [0; 256], total: 0 }
    }

    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        ByteDistribution { counts, total }
    }

    /// Point mass on a single value, useful for constructing test fixtures.
    pub fn point_mass(value: u8, count: u64) -> Self {
        let mut d = Self::new();
        d.counts[value as usize] = count;
        d.total = count;
        d
    }

    pub fn add(&mut self, value: u8) {
        self.counts[value as usize] += 1;
        self.total += 1;
    }

    pub fn add_n(&mut self, value: u8, n: u64) {
        self.counts[value as usize] += n;
        self.total += n;
    }

    pub fn merge(&mut self, other: &ByteDistribution) {
        for v in 0..256 {
            self.counts[v] += other.counts[v];
        }
        self.total += other.total;
    }

    pub fn count(&self, value: u8) -> u64 {
        self.counts[value as usize]
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Empirical probability of `value`; 0 for an empty distribution.
    pub fn probability(&self, value: u8) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[value as usize] as f64 / self.total as f64
        }
    }

    /// Additive-smoothed log probability with pseudocount `epsilon`.
    pub fn log_probability_smoothed(&self, value: u8, epsilon: f64) -> f64 {
        let num = self.counts[value as usize] as f64 + epsilon;
        let den = self.total as f64 + 256.0 * epsilon;
        (num / den).ln()
    }

    /// Highest-count value; ties break toward the smaller byte so results
    /// are stable across runs.
    pub fn argmax(&self) -> u8 {
        let mut best = 0usize;
        for v in 1..256 {
            if self.counts[v] > self.counts[best] {
                best = v;
            }
        }
        best as u8
    }

    /// Zero out one bin, keeping the total consistent.
    pub fn clear_bin(&mut self, value: u8) {
        self.total -= self.counts[value as usize];
        self.counts[value as usize] = 0;
    }
}
