//! Targeted byte leakage by frequency differencing.
//!
//! Two sampling runs share one configuration: an active run in which the
//! victim's bounds check occasionally mispredicts and speculatively pulls
//! the secret line through the fill buffer, and a baseline run without
//! mispredictions. Subtracting the baseline histogram cancels ambient
//! noise; the surviving spike is the secret byte.

use crate::dist::ByteDistribution;
use crate::error::Error;
use crate::rng::derive_seed;
use crate::sampler::{histogram, run_sampling, IndexPlan, VariantConfig};
use crate::uarch::{Machine, VictimProgram};
use crate::Result;

/// Byte values excluded from detection: zeroed memory and bus-idle
/// patterns swamp these bins.
pub const DEFAULT_EXCLUDED: [u8; 2] = [0x00, 0xFF];

/// Detection threshold in robust standard deviations of the delta
/// histogram.
pub const DETECTION_SIGMA: f64 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakMode {
    Raw,
    /// Restrict detection to 7-bit ASCII bins (< 0x80).
    Ascii7,
}

/// Paired active/baseline histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDelta {
    pub active: ByteDistribution,
    pub baseline: ByteDistribution,
}

impl FrequencyDelta {
    pub fn new(active: ByteDistribution, baseline: ByteDistribution) -> FrequencyDelta {
        FrequencyDelta { active, baseline }
    }

    pub fn delta(&self, v: u8) -> i64 {
        self.active.count(v) as i64 - self.baseline.count(v) as i64
    }

    pub fn deltas(&self) -> [i64; 256] {
        std::array::from_fn(|v| self.delta(v as u8))
    }

    /// Σᵥ delta[v] — equals active total minus baseline total.
    pub fn sum_delta(&self) -> i64 {
        self.active.total() as i64 - self.baseline.total() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetedReport {
    pub byte: u8,
    /// Share of the positive delta mass sitting in the detected bin.
    pub confidence: f64,
    pub delta_max: i64,
    pub threshold: f64,
    pub samples_active: u64,
    pub samples_baseline: u64,
}

/// Pure detection core: argmax of the delta over eligible bins, gated by a
/// robust threshold so a pure-noise delta reports `NoSignal` instead of a
/// random bin.
pub fn detect_byte(
    delta: &FrequencyDelta,
    mode: LeakMode,
    excluded: &[u8],
) -> Result<(u8, f64, i64, f64)> {
    let eligible: Vec<u8> = (0..=255u8)
        .filter(|v| !excluded.contains(v))
        .filter(|&v| mode == LeakMode::Raw || v < 0x80)
        .collect();
    if eligible.is_empty() {
        return Err(Error::parameter("every bin is excluded"));
    }

    let best = eligible
        .iter()
        .copied()
        .max_by_key(|&v| (delta.delta(v), std::cmp::Reverse(v)))
        .unwrap();
    let delta_max = delta.delta(best);

    // Spread estimate over the non-winning bins; the winner is held out so
    // a genuine spike cannot inflate its own threshold.
    let rest: Vec<f64> = eligible
        .iter()
        .filter(|&&v| v != best)
        .map(|&v| delta.delta(v) as f64)
        .collect();
    let mean = rest.iter().sum::<f64>() / rest.len() as f64;
    let var = rest.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / rest.len() as f64;
    let threshold = (DETECTION_SIGMA * var.sqrt()).max(1.0);

    if (delta_max as f64) < threshold {
        return Err(Error::NoSignal);
    }
    let positive: i64 = eligible.iter().map(|&v| delta.delta(v).max(0)).sum();
    let confidence = if positive > 0 { delta_max as f64 / positive as f64 } else { 0.0 };
    Ok((best, confidence, delta_max, threshold))
}

/// Run the active and baseline victims for `duration` ticks each and detect
/// the secret byte at `secret_offset` within its line.
///
/// The two runs use machines of their own and independently derived
/// sampling seeds: the noise realizations differ, only their statistics
/// match.
#[allow(clippy::too_many_arguments)]
pub fn targeted_leak(
    active: (&mut Machine, &VictimProgram),
    baseline: (&mut Machine, &VictimProgram),
    vcfg: &VariantConfig,
    secret_offset: u8,
    duration: u64,
    mode: LeakMode,
    excluded: &[u8],
    seed: u64,
) -> Result<TargetedReport> {
    let plan = IndexPlan::Fixed(secret_offset);
    let active_run = run_sampling(
        active.0,
        vcfg,
        Some(active.1),
        None,
        duration,
        derive_seed(seed, "targeted-active"),
    )?;
    let baseline_run = run_sampling(
        baseline.0,
        vcfg,
        Some(baseline.1),
        None,
        duration,
        derive_seed(seed, "targeted-baseline"),
    )?;
    let active_hist = histogram(&active_run.samples(&plan), None);
    let baseline_hist = histogram(&baseline_run.samples(&plan), None);
    let samples_active = active_hist.total();
    let samples_baseline = baseline_hist.total();
    let delta = FrequencyDelta::new(active_hist, baseline_hist);
    let (byte, confidence, delta_max, threshold) = detect_byte(&delta, mode, excluded)?;
    Ok(TargetedReport {
        byte,
        confidence,
        delta_max,
        threshold,
        samples_active,
        samples_baseline,
    })
}
