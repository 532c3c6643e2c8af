//! AES-128 key recovery: trigger-gated sampling of the victim's key line,
//! split across 31 transient channels (16 plain bytes and 15 k=4 dominoes),
//! then chain combination.

use super::key::{combine_key, domino, KeyHypothesis};
use crate::dist::ByteDistribution;
use crate::sampler::{run_sampling, windows_contain, TriggerSpec, Truth, VariantConfig};
use crate::uarch::{Machine, VictimProgram};
use crate::Result;

/// Number of transient extraction channels: byte i for i < 16, then
/// domino(i-16, i-15) for the rest.
pub const AES_CHANNELS: usize = 31;

/// A prepared AES victim: the op schedule, where its key-load trigger
/// fires, and the ground truth for evaluation.
#[derive(Debug, Clone)]
pub struct AesVictim {
    pub program: VictimProgram,
    pub trigger: TriggerSpec,
    /// Sampling window after each trigger, in ticks.
    pub window: u64,
    /// Ticks between consecutive key loads.
    pub load_interval: u64,
    pub truth: [u8; 16],
}

#[derive(Debug, Clone)]
pub struct AesReport {
    /// Rank-1 candidate.
    pub key: [u8; 16],
    /// 1-based rank of the true key among the hypotheses, if present.
    pub truth_rank: Option<usize>,
    pub loads_used: u64,
    /// log2 of the truth's rank; the remaining search depth.
    pub entropy_bits: Option<f64>,
    pub hypotheses: Vec<KeyHypothesis>,
    /// Observed marginal per key byte position, for export and diagnosis.
    pub per_byte: Vec<ByteDistribution>,
}

/// Sample the victim for up to `budget_loads` key loads and combine the
/// observed channels into ranked key candidates.
///
/// Each trigger-window attempt feeds one channel, cycled round-robin; the
/// attempt's full leaked line supplies either a raw key byte or a k=4
/// domino of two adjacent bytes.
pub fn recover_aes(
    m: &mut Machine,
    vcfg: &VariantConfig,
    victim: &AesVictim,
    budget_loads: u64,
    seed: u64,
) -> Result<AesReport> {
    let duration = budget_loads.saturating_mul(victim.load_interval);
    let run = run_sampling(m, vcfg, Some(&victim.program), Some(&victim.trigger), duration, seed)?;

    let mut per_byte = vec![ByteDistribution::new(); 16];
    let mut per_domino = vec![ByteDistribution::new(); 15];
    let mut channel = 0usize;
    for line in &run.lines {
        if !windows_contain(&run.triggers, victim.window, line.timestamp) {
            continue;
        }
        if channel < 16 {
            per_byte[channel].add(line.line[channel]);
        } else {
            let i = channel - 16;
            per_domino[i].add(domino(line.line[i], line.line[i + 1], 4)?);
        }
        channel = (channel + 1) % AES_CHANNELS;
    }

    let hypotheses = combine_key(&per_byte, &per_domino, 16)?;
    let mut key = [0u8; 16];
    key.copy_from_slice(&hypotheses[0].bytes);
    let truth_rank = hypotheses.iter().find(|h| h.bytes == victim.truth).map(|h| h.rank);
    Ok(AesReport {
        key,
        truth_rank,
        loads_used: run.triggers.len() as u64,
        entropy_bits: truth_rank.map(|r| (r as f64).log2()),
        hypotheses,
        per_byte,
    })
}

/// Evaluation helper: fraction of trigger-window samples that truly came
/// from the victim.
pub fn window_purity(run_lines: &[crate::sampler::LineSample], triggers: &[u64], window: u64) -> f64 {
    let mut total = 0u64;
    let mut victim = 0u64;
    for l in run_lines {
        if windows_contain(triggers, window, l.timestamp) {
            total += 1;
            if l.truth == Truth::Victim {
                victim += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        victim as f64 / total as f64
    }
}
