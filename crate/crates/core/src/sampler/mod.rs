//! Leakage sampling: wraps the machine's zombie load in per-variant rate and
//! noise models, producing timestamped byte samples with ground-truth labels
//! for evaluation. The attacker-visible part of a sample is only
//! (timestamp, byte_index, value).

use crate::addr::{Asid, CoreId, PhysAddr, VirtAddr};
use crate::dist::ByteDistribution;
use crate::error::Error;
use crate::rng::rng_from_seed;
use crate::uarch::{execute_op, Machine, Op, PteFlags, VictimProgram, ZombieMode};
use crate::{Result, TICKS_PER_SECOND};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fault-suppression mechanism. The mechanism itself is folded into the
/// preset's attempt rate and true-positive rate; it is carried for
/// configuration fidelity and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suppression {
    Tsx,
    SignalHandler,
    Speculation,
}

/// Where background (non-victim) sample lines come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ByteSource {
    /// 64 i.i.d. uniform bytes per line.
    Uniform,
    /// With probability `weight` a byte is drawn from 0x80..=0xFF
    /// (pointer-heavy noise), otherwise uniform. Calibration fits `weight`.
    HighBiased { weight: f64 },
    /// Fixed corpus of lines, optionally weighted.
    Lines { lines: Vec<[u8; 64]>, weights: Option<Vec<f64>> },
}

impl ByteSource {
    pub fn draw_line(&self, rng: &mut ChaCha8Rng) -> [u8; 64] {
        match self {
            ByteSource::Uniform => {
                let mut line = [0u8; 64];
                rng.fill(&mut line);
                line
            }
            ByteSource::HighBiased { weight } => {
                let mut line = [0u8; 64];
                for b in line.iter_mut() {
                    *b = if rng.gen_bool(weight.clamp(0.0, 1.0)) {
                        rng.gen_range(0x80..=0xFFu8)
                    } else {
                        rng.gen()
                    };
                }
                line
            }
            ByteSource::Lines { lines, weights } => {
                if lines.is_empty() {
                    return [0; 64];
                }
                let idx = match weights {
                    None => rng.gen_range(0..lines.len()),
                    Some(w) => {
                        let total: f64 = w.iter().sum();
                        let mut x = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
                        let mut chosen = lines.len() - 1;
                        for (i, wi) in w.iter().enumerate() {
                            if x < *wi {
                                chosen = i;
                                break;
                            }
                            x -= wi;
                        }
                        chosen
                    }
                };
                lines[idx]
            }
        }
    }
}

/// Sampling configuration for one leakage variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantConfig {
    pub mode: ZombieMode,
    pub suppression: Suppression,
    /// Sampling attempts per simulated second; every attempt emits a byte.
    pub attempts_per_second: f64,
    /// Probability an attempt reflects the fill buffer rather than
    /// background noise.
    pub true_positive_rate: f64,
    pub background: ByteSource,
}

impl VariantConfig {
    /// Named presets with measured rate / true-positive pairs.
    pub fn preset(name: &str) -> Option<VariantConfig> {
        let (mode, suppression, rate, tp) = match name {
            "v1-tsx" => (ZombieMode::KernelAlias, Suppression::Tsx, 5300.0, 0.8574),
            "v2-signal" => (ZombieMode::ClearedAccessed, Suppression::SignalHandler, 80.0, 0.527),
            "v2-tsx" => (ZombieMode::ClearedAccessed, Suppression::Tsx, 7730.0, 0.7628),
            _ => return None,
        };
        Some(VariantConfig {
            mode,
            suppression,
            attempts_per_second: rate,
            true_positive_rate: tp,
            background: ByteSource::Uniform,
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["v1-tsx", "v2-signal", "v2-tsx"]
    }

    /// Ticks between attempts.
    pub fn attempt_interval(&self) -> f64 {
        TICKS_PER_SECOND as f64 / self.attempts_per_second
    }

    pub fn noiseless(mode: ZombieMode, attempts_per_second: f64) -> VariantConfig {
        VariantConfig {
            mode,
            suppression: Suppression::Tsx,
            attempts_per_second,
            true_positive_rate: 1.0,
            background: ByteSource::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Victim,
    Background,
}

/// One recovered byte, with its ground-truth label. The label exists for
/// evaluation only; attacker-side code must use `visible()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZombieSample {
    pub timestamp: u64,
    pub byte_index: u8,
    pub value: u8,
    pub truth: Truth,
}

impl ZombieSample {
    /// Attacker-visible projection.
    pub fn visible(&self) -> (u64, u8, u8) {
        (self.timestamp, self.byte_index, self.value)
    }
}

/// One sampling attempt with the full line the transient domain had access
/// to. Higher-level recoveries derive their own per-attempt bytes from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineSample {
    pub timestamp: u64,
    pub line: [u8; 64],
    pub truth: Truth,
}

impl LineSample {
    pub fn sample_at(&self, idx: u8) -> ZombieSample {
        ZombieSample {
            timestamp: self.timestamp,
            byte_index: idx & 0x3F,
            value: self.line[(idx & 0x3F) as usize],
            truth: self.truth,
        }
    }
}

/// How attempts map to emitted byte samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexPlan {
    /// One sample per attempt, byte index cycling 0..=63.
    Sweep,
    /// One sample per attempt at a fixed index.
    Fixed(u8),
    /// All listed indexes per attempt, sharing the attempt's timestamp.
    Multi(Vec<u8>),
}

impl IndexPlan {
    fn probe_index(&self, attempt: u64) -> u8 {
        match self {
            IndexPlan::Sweep => (attempt % 64) as u8,
            IndexPlan::Fixed(i) => *i & 0x3F,
            IndexPlan::Multi(v) => v.first().copied().unwrap_or(0) & 0x3F,
        }
    }

    pub fn samples_from(&self, attempt: u64, line: &LineSample) -> Vec<ZombieSample> {
        match self {
            IndexPlan::Sweep => vec![line.sample_at(self.probe_index(attempt))],
            IndexPlan::Fixed(i) => vec![line.sample_at(*i)],
            IndexPlan::Multi(idxs) => idxs.iter().map(|&i| line.sample_at(i)).collect(),
        }
    }
}

/// Trigger that gates sampling on victim activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerMode {
    /// Fires when the victim touches the watched line, making a
    /// Flush+Reload probe of that line hit.
    FlushReloadHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerSpec {
    pub asid: Asid,
    pub watched_line: VirtAddr,
    pub mode: TriggerMode,
}

impl TriggerSpec {
    fn fires_on(&self, op: &Op) -> bool {
        match op {
            Op::Read { asid, v } => {
                *asid == self.asid && v.0 & !63 == self.watched_line.0 & !63
            }
            _ => false,
        }
    }
}

/// Attacker probe mappings for one variant, installed once per machine.
#[derive(Debug, Clone, Copy)]
pub struct AttackerContext {
    pub asid: Asid,
    pub probe_base: VirtAddr,
    pub mode: ZombieMode,
}

const ATTACKER_ASID: Asid = Asid(0xFE);
const V1_ALIAS_BASE: u64 = 0xFFFF_8800_0000;
const V1_ALIAS_FRAME: u64 = 0xFFE0_0000_0000;
const V2_PRIMARY_BASE: u64 = 0x7F00_0000;
const V2_STALE_BASE: u64 = 0x7F10_0000;
const V2_FRAME: u64 = 0xFFE0_0010_0000;

impl AttackerContext {
    /// Map the probe pages for `mode` if they are not mapped yet.
    ///
    /// Kernel-alias mode uses a supervisor (huge) mapping of an unrelated
    /// frame; cleared-accessed mode maps the frame twice and probes through
    /// the alias whose accessed bit stays clear.
    pub fn install(m: &mut Machine, mode: ZombieMode) -> Result<AttackerContext> {
        match mode {
            ZombieMode::KernelAlias => {
                if m.pte(ATTACKER_ASID, VirtAddr(V1_ALIAS_BASE)).is_none() {
                    m.map_page(
                        ATTACKER_ASID,
                        VirtAddr(V1_ALIAS_BASE),
                        PhysAddr(V1_ALIAS_FRAME),
                        PteFlags::supervisor(),
                    )?;
                }
                Ok(AttackerContext { asid: ATTACKER_ASID, probe_base: VirtAddr(V1_ALIAS_BASE), mode })
            }
            ZombieMode::ClearedAccessed => {
                if m.pte(ATTACKER_ASID, VirtAddr(V2_PRIMARY_BASE)).is_none() {
                    m.map_page(
                        ATTACKER_ASID,
                        VirtAddr(V2_PRIMARY_BASE),
                        PhysAddr(V2_FRAME),
                        PteFlags::user().accessed(true),
                    )?;
                }
                if m.pte(ATTACKER_ASID, VirtAddr(V2_STALE_BASE)).is_none() {
                    m.map_page(
                        ATTACKER_ASID,
                        VirtAddr(V2_STALE_BASE),
                        PhysAddr(V2_FRAME),
                        PteFlags::user(),
                    )?;
                }
                Ok(AttackerContext { asid: ATTACKER_ASID, probe_base: VirtAddr(V2_STALE_BASE), mode })
            }
        }
    }

    pub fn probe(&self, byte_index: u8) -> VirtAddr {
        VirtAddr(self.probe_base.0 + (byte_index & 0x3F) as u64)
    }
}

/// Result of a sampling run.
#[derive(Debug, Clone, Default)]
pub struct SampleRun {
    pub lines: Vec<LineSample>,
    /// Ticks at which the trigger fired.
    pub triggers: Vec<u64>,
}

impl SampleRun {
    pub fn samples(&self, plan: &IndexPlan) -> Vec<ZombieSample> {
        let mut out = Vec::new();
        for (k, line) in self.lines.iter().enumerate() {
            out.extend(plan.samples_from(k as u64, line));
        }
        out
    }
}

/// Run the sampler for `duration` ticks, optionally co-driving a victim
/// program on core 0. Victim steps and attacker attempts are merged by
/// tick; on a tie the victim op executes first. Attempts are spaced by the
/// variant's rate; each attempt flips the true-positive coin and either
/// captures the stale line a zombie load selects or draws a background
/// line.
pub fn run_sampling(
    m: &mut Machine,
    vcfg: &VariantConfig,
    victim: Option<&VictimProgram>,
    trigger: Option<&TriggerSpec>,
    duration: u64,
    seed: u64,
) -> Result<SampleRun> {
    if vcfg.attempts_per_second <= 0.0 {
        return Err(Error::parameter("attempts_per_second must be positive"));
    }
    if !(0.0..=1.0).contains(&vcfg.true_positive_rate) {
        return Err(Error::parameter("true_positive_rate must lie in [0, 1]"));
    }
    let ctx = AttackerContext::install(m, vcfg.mode)?;
    let mut rng = rng_from_seed(seed);
    let base = m.clock();
    let interval = vcfg.attempt_interval();
    let end = base + duration;

    let mut run = SampleRun::default();
    let mut attempt: u64 = 0;
    let mut step: usize = 0;
    let mut attempt_tick = base + ((attempt + 1) as f64 * interval).floor() as u64;

    loop {
        let step_tick = victim
            .filter(|p| step < p.steps.len())
            .map(|p| base + p.step_start(step));
        let next_attempt = if attempt_tick < end { Some(attempt_tick) } else { None };

        let take_victim = match (step_tick, next_attempt) {
            (None, None) => break,
            (Some(st), Some(at)) => st <= at,
            (Some(_), None) => true,
            (None, Some(_)) => false,
        };

        if take_victim {
            // Victim step: ops on consecutive ticks.
            let program = victim.unwrap();
            let mut t = step_tick.unwrap();
            for op in &program.steps[step] {
                m.advance_to(t);
                if let Some(spec) = trigger {
                    if spec.fires_on(op) {
                        run.triggers.push(t);
                    }
                }
                execute_op(m, CoreId::Core0, op);
                t += 1;
            }
            step += 1;
        } else {
            let at = attempt_tick;
            m.advance_to(at);
            let idx = plan_probe_index(attempt);
            let truth_line = if rng.gen_bool(vcfg.true_positive_rate) {
                match m.zombie_load(CoreId::Core1, ctx.asid, ctx.probe(idx), ctx.mode) {
                    Ok(leak) => {
                        let entry = m.leak_entry(&leak);
                        Some(LineSample {
                            timestamp: at,
                            line: entry.data,
                            truth: if entry.owner == CoreId::Core0 {
                                Truth::Victim
                            } else {
                                Truth::Background
                            },
                        })
                    }
                    // Nothing stale to forward: the attempt still recovers
                    // a byte, from ambient noise.
                    Err(Error::NoStaleData) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let line = truth_line.unwrap_or_else(|| LineSample {
                timestamp: at,
                line: vcfg.background.draw_line(&mut rng),
                truth: Truth::Background,
            });
            run.lines.push(line);
            attempt += 1;
            attempt_tick = base + ((attempt + 1) as f64 * interval).floor() as u64;
        }
    }
    m.advance_to(end);
    Ok(run)
}

/// Probe byte offset used for the zombie op itself; the captured line makes
/// the emitted index plan independent of it.
fn plan_probe_index(attempt: u64) -> u8 {
    (attempt % 64) as u8
}

/// Sample a quiescent machine: no victim runs during the stream. Byte
/// indexes sweep 0..=63.
pub fn sample_stream(
    m: &mut Machine,
    vcfg: &VariantConfig,
    duration: u64,
    seed: u64,
) -> Result<Vec<ZombieSample>> {
    let run = run_sampling(m, vcfg, None, None, duration, seed)?;
    Ok(run.samples(&IndexPlan::Sweep))
}

/// True when `ts` falls inside [t, t + window] for some trigger tick t.
pub fn windows_contain(triggers: &[u64], window: u64, ts: u64) -> bool {
    // Latest trigger at or before ts decides.
    let idx = triggers.partition_point(|&t| t <= ts);
    if idx == 0 {
        return false;
    }
    ts - triggers[idx - 1] <= window
}

/// Keep samples that fall inside a trigger window. Order is preserved;
/// `window` saturates, so `u64::MAX` keeps everything after the first
/// trigger.
pub fn triggered_samples(
    stream: &[ZombieSample],
    trigger_events: &[u64],
    window: u64,
) -> Vec<ZombieSample> {
    stream
        .iter()
        .filter(|s| windows_contain(trigger_events, window, s.timestamp))
        .copied()
        .collect()
}

/// Histogram of sample values, optionally restricted to one byte index.
pub fn histogram(stream: &[ZombieSample], index_filter: Option<u8>) -> ByteDistribution {
    let mut dist = ByteDistribution::new();
    for s in stream {
        if index_filter.map_or(true, |i| s.byte_index == i) {
            dist.add(s.value);
        }
    }
    dist
}

/// CSV export of the attacker-visible stream: timestamp,byte_index,value.
pub fn samples_to_csv(stream: &[ZombieSample]) -> String {
    let mut out = String::from("timestamp,byte_index,value\n");
    for s in stream {
        out.push_str(&format!("{},{},{:#04x}\n", s.timestamp, s.byte_index, s.value));
    }
    out
}

/// Debug CSV including the ground-truth label.
pub fn samples_to_csv_debug(stream: &[ZombieSample]) -> String {
    let mut out = String::from("timestamp,byte_index,value,truth\n");
    for s in stream {
        let truth = match s.truth {
            Truth::Victim => "victim",
            Truth::Background => "background",
        };
        out.push_str(&format!("{},{},{:#04x},{}\n", s.timestamp, s.byte_index, s.value, truth));
    }
    out
}

/// Parse the CSV forms produced above. A missing truth column parses as
/// background.
pub fn samples_from_csv(text: &str) -> Result<Vec<ZombieSample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::parameter(format!("samples csv line {}: too few fields", lineno + 1)));
        }
        let parse_u64 = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parameter(format!("samples csv line {}: bad number {s:?}", lineno + 1)))
        };
        let parse_byte = |s: &str| -> Result<u8> {
            let s = s.trim();
            let v = if let Some(hex) = s.strip_prefix("0x") {
                u8::from_str_radix(hex, 16).ok()
            } else {
                s.parse::<u8>().ok()
            };
            v.ok_or_else(|| Error::parameter(format!("samples csv line {}: bad byte {s:?}", lineno + 1)))
        };
        let truth = match fields.get(3).copied() {
            Some("victim") => Truth::Victim,
            _ => Truth::Background,
        };
        out.push(ZombieSample {
            timestamp: parse_u64(fields[0])?,
            byte_index: parse_byte(fields[1])?,
            value: parse_byte(fields[2])?,
            truth,
        });
    }
    Ok(out)
}
