//! Cross-core covert channel over the fill buffer.
//!
//! Each payload byte travels as a 32-bit packet: data, a two's-complement
//! checksum, a sequence number and a constant prefix. The receiver decodes
//! transiently: it folds data and checksum into a 16-bit value that indexes
//! a 256-page oracle array, so only checksum-consistent packets leave a
//! cache footprint. Sequence numbers are recovered through a second oracle
//! pass and drive mod-256 reassembly.

use crate::addr::{Asid, PhysAddr, VirtAddr};
use crate::error::Error;
use crate::sampler::{run_sampling, IndexPlan, SampleRun, VariantConfig, ZombieSample};
use crate::uarch::{Machine, MachineConfig, Op, PteFlags, VictimProgram};
use crate::{Result, TICKS_PER_SECOND};
use std::collections::BTreeMap;

/// One covert-channel packet. Wire layout is little-endian byte order:
/// bits 0-7 data, 8-15 checksum, 16-23 seq, 24-31 prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub data: u8,
    pub checksum: u8,
    pub seq: u8,
    pub prefix: u8,
}

pub const DEFAULT_PREFIX: u8 = 0xC3;

pub fn encode_packet(data: u8, seq: u8, prefix: u8) -> Packet {
    Packet { data, checksum: data.wrapping_neg(), seq, prefix }
}

impl Packet {
    pub fn to_bytes(&self) -> [u8; 4] {
        [self.data, self.checksum, self.seq, self.prefix]
    }

    pub fn from_bytes(b: [u8; 4]) -> Packet {
        Packet { data: b[0], checksum: b[1], seq: b[2], prefix: b[3] }
    }

    pub fn to_u32(&self) -> u32 {
        u32::from_le_bytes(self.to_bytes())
    }

    /// The packet occupies the first four bytes of a cache line.
    pub fn to_line(&self) -> [u8; 64] {
        let mut line = [0u8; 64];
        line[..4].copy_from_slice(&self.to_bytes());
        line
    }

    pub fn is_well_formed(&self) -> bool {
        self.data.wrapping_add(self.checksum) == 0
    }
}

/// Fold checksum into data: bits 0-7 carry the data byte, bits 8-15 carry
/// (data + checksum) mod 256. The result indexes the oracle array; it stays
/// within the 256 mapped pages exactly when the checksum is consistent.
pub fn transient_verify(data: u8, checksum: u8) -> u16 {
    data as u16 | ((data.wrapping_add(checksum) as u16) << 8)
}

/// 256-page probe array. Each accepted value caches the first line of its
/// page; out-of-bounds indexes (failed checksums) touch nothing.
#[derive(Debug, Clone)]
pub struct OracleArray {
    cached: [bool; 256],
}

impl Default for OracleArray {
    fn default() -> Self {
        Self::new()
    }
}

impl OracleArray {
    pub fn new() -> OracleArray {
        OracleArray { cached: [false; 256] }
    }

    pub fn touch(&mut self, index: u16) {
        if index <= 255 {
            self.cached[index as usize] = true;
        }
    }

    pub fn cached_count(&self) -> usize {
        self.cached.iter().filter(|&&c| c).count()
    }

    /// Flush+Reload pass: returns the cached values in ascending order and
    /// resets every flag.
    pub fn scan(&mut self) -> Vec<u8> {
        let mut hits = Vec::new();
        for (i, c) in self.cached.iter_mut().enumerate() {
            if *c {
                hits.push(i as u8);
                *c = false;
            }
        }
        hits
    }
}

/// Cache-footprint encoding parameters for one transmitted value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitEncoding {
    /// Lines cached per signal; two lines (128 bytes) is the floor that
    /// survives an adjacent-line prefetcher.
    pub lines_per_bit: usize,
    /// One page per value (true for the oracle array) versus packed lines.
    pub page_per_value: bool,
}

impl Default for BitEncoding {
    fn default() -> Self {
        BitEncoding { lines_per_bit: 2, page_per_value: true }
    }
}

impl BitEncoding {
    pub fn validate(&self) -> Result<()> {
        if self.lines_per_bit * 64 < 128 {
            return Err(Error::parameter("lines_per_bit must cover at least 128 bytes"));
        }
        Ok(())
    }
}

/// Sender/loopback tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Flush+reload pairs the sender issues per packet, alternating over
    /// the sender's two lines so several fill-buffer entries carry it.
    pub repeats: usize,
    pub prefix: u8,
    /// Receiver sampling attempts budgeted per packet window; sets the
    /// symbol time and with it the throughput.
    pub attempts_per_packet: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { repeats: 64, prefix: DEFAULT_PREFIX, attempts_per_packet: 6.0 }
    }
}

impl ChannelConfig {
    /// Ticks one packet occupies on the wire.
    pub fn window_ticks(&self, vcfg: &VariantConfig) -> u64 {
        (self.attempts_per_packet * vcfg.attempt_interval()).ceil() as u64
    }
}

const SENDER_ASID: Asid = Asid(0x51);
const SENDER_BASE: u64 = 0x5000_0000;
const SENDER_FRAME: u64 = 0xFFD0_0000_0000;

/// Build the sender's victim program: per payload byte, write the packet to
/// two distinct lines, then keep both lines flowing through the fill buffer
/// with flush+reload pairs for the rest of the window.
pub fn sender_program(payload: &[u8], cfg: &ChannelConfig, window: u64) -> VictimProgram {
    let line_a = VirtAddr(SENDER_BASE);
    let line_b = VirtAddr(SENDER_BASE + 64);
    let steps = payload
        .iter()
        .enumerate()
        .map(|(i, &byte)| {
            let packet = encode_packet(byte, (i % 256) as u8, cfg.prefix);
            let mut ops = vec![
                Op::StoreNt { asid: SENDER_ASID, v: line_a, data: packet.to_line() },
                Op::StoreNt { asid: SENDER_ASID, v: line_b, data: packet.to_line() },
            ];
            for r in 0..cfg.repeats {
                let v = if r % 2 == 0 { line_a } else { line_b };
                ops.push(Op::Flush { asid: SENDER_ASID, v });
                ops.push(Op::Read { asid: SENDER_ASID, v });
            }
            ops
        })
        .collect();
    VictimProgram::new(steps, window)
}

/// Map the sender's transmission page if it is not present yet.
pub fn install_sender(m: &mut Machine) -> Result<()> {
    if m.pte(SENDER_ASID, VirtAddr(SENDER_BASE)).is_none() {
        m.map_page(SENDER_ASID, VirtAddr(SENDER_BASE), PhysAddr(SENDER_FRAME), PteFlags::user())?;
    }
    Ok(())
}

/// Drive a transmission of `payload` and return the receiver-side sample
/// stream plus the simulated time spent.
pub fn send(
    payload: &[u8],
    m: &mut Machine,
    vcfg: &VariantConfig,
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<(Vec<ZombieSample>, u64)> {
    if payload.is_empty() {
        return Err(Error::parameter("payload must be non-empty"));
    }
    install_sender(m)?;
    let window = cfg.window_ticks(vcfg);
    let program = sender_program(payload, cfg, window);
    let duration = window * payload.len() as u64;
    let run: SampleRun = run_sampling(m, vcfg, Some(&program), None, duration, seed)?;
    Ok((run.samples(&IndexPlan::Multi(vec![0, 1, 2, 3])), duration))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    /// Packets accepted and delivered in order (duplicates excluded).
    pub packets_ok: u64,
    /// Candidates whose checksum fold left the oracle array untouched.
    pub packets_rejected: u64,
    pub duplicates: u64,
    /// First sequence number that never arrived; the payload is truncated
    /// there.
    pub gap: Option<u8>,
}

/// Decode a sample stream. Samples are collated into 4-byte packet
/// candidates per attempt timestamp; prefix mismatches are dropped
/// silently (they are ambient noise, not sender packets), the checksum is
/// checked transiently through the oracle array, and the sequence number is
/// recovered through its own oracle pass. Sequence numbering starts at 0
/// and duplicates are resolved first-wins inside a 128-wide mod-256 window.
pub fn receive(samples: &[ZombieSample], expected_prefix: u8) -> (Vec<u8>, ChannelStats) {
    let mut stats = ChannelStats::default();

    // Collate byte_index 0..=3 per timestamp.
    let mut groups: BTreeMap<u64, [Option<u8>; 4]> = BTreeMap::new();
    for s in samples {
        if s.byte_index < 4 {
            groups.entry(s.timestamp).or_insert([None; 4])[s.byte_index as usize] = Some(s.value);
        }
    }

    let mut data_oracle = OracleArray::new();
    let mut seq_oracle = OracleArray::new();
    let mut next_expected: u8 = 0;
    let mut started = false;
    let mut pending: BTreeMap<u8, u8> = BTreeMap::new();
    let mut payload = Vec::new();
    let deliver = |payload: &mut Vec<u8>, pending: &mut BTreeMap<u8, u8>, next: &mut u8| {
        while let Some(data) = pending.remove(next) {
            payload.push(data);
            *next = next.wrapping_add(1);
        }
    };

    for bytes in groups.values() {
        let (Some(data), Some(checksum), Some(seq), Some(prefix)) =
            (bytes[0], bytes[1], bytes[2], bytes[3])
        else {
            continue;
        };
        if prefix != expected_prefix {
            continue;
        }
        data_oracle.touch(transient_verify(data, checksum));
        let hits = data_oracle.scan();
        if hits.is_empty() {
            stats.packets_rejected += 1;
            continue;
        }
        let data = hits[0];
        seq_oracle.touch(seq as u16);
        let seq = seq_oracle.scan()[0];

        started = true;
        let distance = seq.wrapping_sub(next_expected);
        if distance >= 128 {
            // Behind the reassembly pointer: an echo of a packet already
            // delivered (or noise colliding with one).
            stats.duplicates += 1;
            continue;
        }
        if pending.contains_key(&seq) {
            stats.duplicates += 1;
            continue;
        }
        pending.insert(seq, data);
        stats.packets_ok += 1;
        deliver(&mut payload, &mut pending, &mut next_expected);
    }

    if started && !pending.is_empty() {
        stats.gap = Some(next_expected);
        // Everything beyond the hole is undeliverable in order.
        stats.packets_ok -= pending.len() as u64;
        pending.clear();
    }
    (payload, stats)
}

/// Loopback benchmark result. Throughput is defined as
/// 8 * packets_ok / simulated seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackReport {
    pub payload_bytes: usize,
    pub simulated_seconds: f64,
    pub kbit_per_s: f64,
    pub stats: ChannelStats,
    pub payload_errors: usize,
}

/// Send `payload` through a fresh dual-thread machine and decode it.
/// `payload_errors` counts positional byte mismatches plus any length
/// difference against the original.
pub fn loopback(
    payload: &[u8],
    vcfg: &VariantConfig,
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<(Vec<u8>, LoopbackReport)> {
    let mut m = Machine::new(MachineConfig::default());
    let (samples, duration) = send(payload, &mut m, vcfg, cfg, seed)?;
    let (decoded, stats) = receive(&samples, cfg.prefix);
    let simulated_seconds = duration as f64 / TICKS_PER_SECOND as f64;
    let kbit_per_s = 8.0 * stats.packets_ok as f64 / simulated_seconds / 1000.0;
    let mismatches = payload
        .iter()
        .zip(decoded.iter())
        .filter(|(a, b)| a != b)
        .count();
    let payload_errors = mismatches + payload.len().abs_diff(decoded.len());
    let report = LoopbackReport {
        payload_bytes: payload.len(),
        simulated_seconds,
        kbit_per_s,
        stats,
        payload_errors,
    };
    Ok((decoded, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Truth;
    use crate::uarch::ZombieMode;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn encode_matches_twos_complement_examples() {
        assert_eq!(encode_packet(0x41, 0x07, 0xC3).to_bytes(), [0x41, 0xBF, 0x07, 0xC3]);
        assert_eq!(encode_packet(0x00, 0, 0xC3).checksum, 0x00);
        assert_eq!(encode_packet(0x80, 0, 0xC3).checksum, 0x80);
        assert!(encode_packet(0x41, 0, 0xC3).is_well_formed());
    }

    #[test]
    fn verify_folds_checksum_into_high_bits() {
        assert_eq!(transient_verify(0x41, 0xBF), 0x0041);
        assert_eq!(transient_verify(0x41, 0xC0), 0x0141);
    }

    #[test]
    fn exactly_256_of_65536_pairs_are_accepted() {
        let mut accepted = 0u32;
        for data in 0..=255u8 {
            for checksum in 0..=255u8 {
                let idx = transient_verify(data, checksum);
                if idx <= 255 {
                    accepted += 1;
                    // The accepted index is the data byte itself, and only
                    // the complement checksum gets here.
                    assert_eq!(idx, data as u16);
                    assert_eq!(checksum, data.wrapping_neg());
                }
            }
        }
        assert_eq!(accepted, 256);
    }

    #[test]
    fn oracle_scan_returns_touched_pages_and_resets() {
        let mut oracle = OracleArray::new();
        oracle.touch(0x41);
        oracle.touch(0x07);
        oracle.touch(0x300); // out of bounds: ignored
        assert_eq!(oracle.scan(), vec![0x07, 0x41]);
        assert_eq!(oracle.scan(), Vec::<u8>::new());
    }

    #[test]
    fn rejected_packets_never_cache_a_page() {
        let mut rng = crate::rng::rng_from_seed(99);
        let mut oracle = OracleArray::new();
        let mut tried = 0;
        while tried < 1000 {
            let data: u8 = rng.gen();
            let checksum: u8 = rng.gen();
            if checksum == data.wrapping_neg() {
                continue;
            }
            oracle.touch(transient_verify(data, checksum));
            tried += 1;
        }
        assert_eq!(oracle.cached_count(), 0);
    }

    #[test]
    fn bit_encoding_needs_two_lines() {
        assert!(BitEncoding::default().validate().is_ok());
        let thin = BitEncoding { lines_per_bit: 1, page_per_value: true };
        assert!(thin.validate().is_err());
    }

    fn packet_samples(packet: Packet, ts: u64) -> Vec<ZombieSample> {
        packet
            .to_bytes()
            .iter()
            .enumerate()
            .map(|(i, &value)| ZombieSample {
                timestamp: ts,
                byte_index: i as u8,
                value,
                truth: Truth::Victim,
            })
            .collect()
    }

    #[test]
    fn noise_free_stream_decodes_exactly() {
        let mut samples = Vec::new();
        for (i, &b) in b"abc".iter().enumerate() {
            samples.extend(packet_samples(encode_packet(b, i as u8, 0xC3), 100 * (i as u64 + 1)));
        }
        let (payload, stats) = receive(&samples, 0xC3);
        assert_eq!(payload, b"abc");
        assert_eq!(stats.packets_ok, 3);
        assert_eq!(stats.packets_rejected, 0);
        assert_eq!(stats.gap, None);
    }

    #[test]
    fn corrupt_checksums_are_rejected_without_payload_damage() {
        let mut samples = Vec::new();
        samples.extend(packet_samples(encode_packet(b'x', 0, 0xC3), 100));
        let mut bad = encode_packet(b'y', 1, 0xC3);
        bad.checksum = bad.checksum.wrapping_add(1);
        samples.extend(packet_samples(bad, 200));
        samples.extend(packet_samples(encode_packet(b'z', 1, 0xC3), 300));
        let (payload, stats) = receive(&samples, 0xC3);
        assert_eq!(payload, b"xz");
        assert!(stats.packets_rejected >= 1);
    }

    #[test]
    fn duplicates_are_counted_not_delivered_twice() {
        let mut samples = Vec::new();
        samples.extend(packet_samples(encode_packet(b'q', 0, 0xC3), 100));
        samples.extend(packet_samples(encode_packet(b'q', 0, 0xC3), 150));
        samples.extend(packet_samples(encode_packet(b'r', 1, 0xC3), 200));
        let (payload, stats) = receive(&samples, 0xC3);
        assert_eq!(payload, b"qr");
        assert_eq!(stats.duplicates, 1);
        assert_eq!(stats.packets_ok, 2);
    }

    #[test]
    fn wrong_prefix_is_ignored_silently() {
        let samples = packet_samples(encode_packet(b'a', 0, 0x11), 100);
        let (payload, stats) = receive(&samples, 0xC3);
        assert!(payload.is_empty());
        assert_eq!(stats.packets_rejected, 0);
    }

    #[test]
    fn missing_seq_truncates_at_gap() {
        let mut samples = Vec::new();
        samples.extend(packet_samples(encode_packet(b'a', 0, 0xC3), 100));
        // seq 1 lost
        samples.extend(packet_samples(encode_packet(b'c', 2, 0xC3), 300));
        let (payload, stats) = receive(&samples, 0xC3);
        assert_eq!(payload, b"a");
        assert_eq!(stats.gap, Some(1));
        assert_eq!(stats.packets_ok, 1);
    }

    proptest! {
        // Any permutation of up to 128 consecutive packets reassembles to
        // the original order.
        #[test]
        fn permuted_windows_reassemble(len in 1usize..=128, seed in 0u64..1000) {
            let payload: Vec<u8> = (0..len).map(|i| (i * 7 + 13) as u8).collect();
            let mut order: Vec<usize> = (0..len).collect();
            let mut rng = crate::rng::rng_from_seed(seed);
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut samples = Vec::new();
            for (slot, &i) in order.iter().enumerate() {
                let p = encode_packet(payload[i], i as u8, 0xC3);
                samples.extend(packet_samples(p, 100 * (slot as u64 + 1)));
            }
            let (decoded, stats) = receive(&samples, 0xC3);
            prop_assert_eq!(decoded, payload);
            prop_assert_eq!(stats.packets_ok as usize, len);
            prop_assert_eq!(stats.gap, None);
        }
    }

    #[test]
    fn send_spreads_packets_over_two_lines_and_slots() {
        let mut m = Machine::new(MachineConfig::default());
        m.enable_trace();
        let vcfg = VariantConfig::noiseless(ZombieMode::KernelAlias, 5300.0);
        let cfg = ChannelConfig::default();
        send(b"A", &mut m, &vcfg, &cfg, 1).unwrap();
        let trace = m.take_trace();
        let mut lines = std::collections::BTreeSet::new();
        let mut slots = std::collections::BTreeSet::new();
        for ev in trace.events() {
            if ev.op == "read" && ev.fb_slot.is_some() {
                if let Some(p) = ev.paddr {
                    if p & !0xFFF == SENDER_FRAME {
                        lines.insert(p & !63);
                        slots.insert(ev.fb_slot.unwrap());
                    }
                }
            }
        }
        assert!(lines.len() >= 2, "sender used {} distinct lines", lines.len());
        assert!(slots.len() >= 2, "sender used {} distinct slots", slots.len());
    }

    #[test]
    fn noiseless_loopback_is_identity_for_all_byte_values() {
        let payload: Vec<u8> = (0..=255u8).collect();
        let mut vcfg = VariantConfig::noiseless(ZombieMode::KernelAlias, 5300.0);
        vcfg.attempts_per_second = 5300.0;
        let cfg = ChannelConfig { attempts_per_packet: 3.0, ..ChannelConfig::default() };
        let (decoded, report) = loopback(&payload, &vcfg, &cfg, 7).unwrap();
        assert_eq!(decoded, payload);
        assert_eq!(report.payload_errors, 0);
        assert_eq!(report.stats.packets_rejected, 0);
        // Throughput accounting is definitional.
        let expect = 8.0 * report.stats.packets_ok as f64 / report.simulated_seconds / 1000.0;
        assert!((report.kbit_per_s - expect).abs() < 1e-9);
    }

    #[test]
    fn empty_payload_is_a_parameter_error() {
        let mut m = Machine::new(MachineConfig::default());
        let vcfg = VariantConfig::noiseless(ZombieMode::KernelAlias, 5300.0);
        assert!(send(&[], &mut m, &vcfg, &ChannelConfig::default(), 0).is_err());
    }
}
