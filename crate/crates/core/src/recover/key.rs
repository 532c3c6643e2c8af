//! Domino bytes and key-candidate combination.
//!
//! A domino byte splices two adjacent secret bytes: the low k bits of the
//! first ahead of the high 8-k bits of the second. Observing dominoes next
//! to plain byte samples ties neighboring positions together, which both
//! the chain DP (`combine_key`) and the consistency filter
//! (`sliding_window_filter`) exploit.

use crate::dist::ByteDistribution;
use crate::error::Error;
use crate::Result;

/// Additive smoothing applied to every distribution lookup during scoring.
pub const SMOOTH_EPSILON: f64 = 1.0;

/// Observed domino value for one adjacent pair of secret bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DominoByte {
    /// Bits taken from the first byte; 1..=7.
    pub k: u8,
    pub value: u8,
    /// Index of the first byte of the pair.
    pub position: usize,
}

/// Splice `a` and `b`: low k bits of `a`, then high 8-k bits of `b`.
pub fn domino(a: u8, b: u8, k: u8) -> Result<u8> {
    if !(1..=7).contains(&k) {
        return Err(Error::parameter(format!("domino split k={k} outside 1..=7")));
    }
    let low = a & ((1u16 << k) - 1) as u8;
    Ok((low << (8 - k)) | (b >> k))
}

/// A ranked key candidate. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyHypothesis {
    pub bytes: Vec<u8>,
    pub score: f64,
    pub rank: usize,
}

fn smoothed_log(dist: &ByteDistribution, value: u8) -> f64 {
    dist.log_probability_smoothed(value, SMOOTH_EPSILON)
}

/// One k-best DP cell: path score plus predecessor (byte, slot).
type Cell = (f64, u8, u16);

/// Combine per-byte marginals with k=4 domino distributions into ranked key
/// candidates.
///
/// Scores are Σᵢ log P̂ᵢ(bᵢ) + Σᵢ log D̂ᵢ(domino(bᵢ, bᵢ₊₁, 4)) with additive
/// smoothing; the k-best Viterbi pass keeps `top_n` partial paths per state
/// so the returned list is the exact global top `top_n`. Terms accumulate
/// left to right (node, edge, node, ...), which keeps scores bit-identical
/// to a naive enumeration of the same sum.
pub fn combine_key(
    per_byte: &[ByteDistribution],
    per_domino: &[ByteDistribution],
    top_n: usize,
) -> Result<Vec<KeyHypothesis>> {
    if per_byte.is_empty() {
        return Err(Error::parameter("need at least one byte position"));
    }
    if per_domino.len() + 1 != per_byte.len() {
        return Err(Error::parameter(format!(
            "{} positions need {} domino distributions, got {}",
            per_byte.len(),
            per_byte.len() - 1,
            per_domino.len()
        )));
    }
    if top_n == 0 {
        return Err(Error::parameter("top_n must be at least 1"));
    }
    for (i, d) in per_byte.iter().enumerate() {
        if d.is_empty() {
            return Err(Error::InsufficientData { position: i });
        }
    }

    let n = per_byte.len();
    // layers[stage][v] = up to top_n best partial paths ending in byte v,
    // best first.
    let mut layers: Vec<Vec<Vec<Cell>>> = Vec::with_capacity(n);
    layers.push((0..256).map(|v| vec![(smoothed_log(&per_byte[0], v as u8), 0u8, 0u16)]).collect());

    let mut edge = vec![0.0f64; 256 * 256];
    for stage in 1..n {
        for u in 0..256 {
            for w in 0..256 {
                let d = domino(u as u8, w as u8, 4).unwrap();
                edge[(u << 8) | w] = smoothed_log(&per_domino[stage - 1], d);
            }
        }
        let prev = &layers[stage - 1];
        let mut layer: Vec<Vec<Cell>> = Vec::with_capacity(256);
        for w in 0..256 {
            let node = smoothed_log(&per_byte[stage], w as u8);
            // Exact top-k over all (u, slot) extensions; insertion keeps
            // the list sorted best-first, ties resolving toward the
            // earlier-scanned (smaller) predecessor.
            let mut best: Vec<Cell> = Vec::with_capacity(top_n + 1);
            for u in 0..256 {
                let e = edge[(u << 8) | w];
                for (j, &(s, _, _)) in prev[u].iter().enumerate() {
                    let cand = (s + e) + node;
                    if best.len() == top_n && cand <= best[top_n - 1].0 {
                        continue;
                    }
                    let pos = best.partition_point(|&(bs, _, _)| bs >= cand);
                    best.insert(pos, (cand, u as u8, j as u16));
                    if best.len() > top_n {
                        best.pop();
                    }
                }
            }
            layer.push(best);
        }
        layers.push(layer);
    }

    // Materialize every finalist, then rank globally: score descending,
    // key bytes ascending on exact ties.
    let mut finalists: Vec<(f64, Vec<u8>)> = Vec::new();
    for v in 0..256u16 {
        for j in 0..layers[n - 1][v as usize].len() {
            let mut bytes = vec![0u8; n];
            let mut state = v as u8;
            let mut slot = j;
            for stage in (0..n).rev() {
                bytes[stage] = state;
                let (_, pu, pj) = layers[stage][state as usize][slot];
                state = pu;
                slot = pj as usize;
            }
            finalists.push((layers[n - 1][v as usize][j].0, bytes));
        }
    }
    finalists.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    finalists.truncate(top_n);
    Ok(finalists
        .into_iter()
        .enumerate()
        .map(|(i, (score, bytes))| KeyHypothesis { bytes, score, rank: i + 1 })
        .collect())
}

/// How unsupported candidate values are treated by the window filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowFilterMode {
    /// Zero out unsupported values.
    Eliminate,
    /// Scale their counts by `factor` instead of removing them.
    DownWeight { factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFiltered {
    pub distributions: Vec<ByteDistribution>,
    /// True when every window was empty and the filter was a no-op.
    pub vacuous: bool,
}

fn mask(k: u8) -> u8 {
    ((1u16 << k) - 1) as u8
}

/// True when some observed domino value in `window` (the k=1..=7
/// distributions for one adjacent pair) is consistent with `v` standing in
/// the pair at `side`: 0 = first byte, 1 = second byte. Empty k-slots are
/// vacuously consistent.
fn supported(window: &[ByteDistribution; 7], v: u8, side: u8) -> bool {
    for k in 1..=7u8 {
        let dist = &window[k as usize - 1];
        if dist.is_empty() {
            continue;
        }
        let ok = (0..=255u8).any(|d| {
            if dist.count(d) == 0 {
                return false;
            }
            if side == 0 {
                // High k bits of the domino are the low k bits of v.
                d >> (8 - k) == v & mask(k)
            } else {
                // Low 8-k bits of the domino are the high 8-k bits of v.
                d & mask(8 - k) == v >> k
            }
        });
        if !ok {
            return false;
        }
    }
    true
}

/// Filter per-position candidate distributions against sliding-window
/// domino observations. `windows[i]` holds the k=1..=7 domino distributions
/// for the pair (i, i+1); a candidate byte survives only if every non-empty
/// window that involves it contains at least one consistent observation.
pub fn sliding_window_filter(
    candidates: &[ByteDistribution],
    windows: &[[ByteDistribution; 7]],
    mode: WindowFilterMode,
) -> Result<WindowFiltered> {
    if candidates.is_empty() {
        return Err(Error::parameter("need at least one candidate position"));
    }
    if windows.len() + 1 != candidates.len() {
        return Err(Error::parameter(format!(
            "{} positions need {} windows, got {}",
            candidates.len(),
            candidates.len() - 1,
            windows.len()
        )));
    }
    if windows.iter().all(|w| w.iter().all(|d| d.is_empty())) {
        return Ok(WindowFiltered { distributions: candidates.to_vec(), vacuous: true });
    }

    let mut out = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter().enumerate() {
        let mut counts = [0u64; 256];
        for v in 0..=255u8 {
            let c = cand.count(v);
            if c == 0 {
                continue;
            }
            let ok_forward = i >= windows.len() || supported(&windows[i], v, 0);
            let ok_backward = i == 0 || supported(&windows[i - 1], v, 1);
            counts[v as usize] = if ok_forward && ok_backward {
                c
            } else {
                match mode {
                    WindowFilterMode::Eliminate => 0,
                    WindowFilterMode::DownWeight { factor } => (c as f64 * factor) as u64,
                }
            };
        }
        out.push(ByteDistribution::from_counts(counts));
    }
    Ok(WindowFiltered { distributions: out, vacuous: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn domino_matches_nibble_and_bit_examples() {
        assert_eq!(domino(0xAB, 0xCD, 4).unwrap(), 0xBC);
        assert_eq!(domino(0x01, 0x80, 7).unwrap(), 0x03);
        for k in 1..=7 {
            assert_eq!(domino(0x00, 0x00, k).unwrap(), 0x00);
        }
        assert!(domino(1, 2, 0).is_err());
        assert!(domino(1, 2, 8).is_err());
    }

    /// Independent oracle: build the domino from explicit bit vectors.
    fn domino_bits(a: u8, b: u8, k: u8) -> u8 {
        let bits = |x: u8| (0..8).rev().map(move |i| (x >> i) & 1);
        let a_bits: Vec<u8> = bits(a).collect();
        let b_bits: Vec<u8> = bits(b).collect();
        // Low k bits of a, then high 8-k bits of b.
        let spliced: Vec<u8> = a_bits[(8 - k as usize)..]
            .iter()
            .chain(b_bits[..(8 - k as usize)].iter())
            .copied()
            .collect();
        spliced.iter().fold(0u8, |acc, &bit| (acc << 1) | bit)
    }

    proptest! {
        #[test]
        fn domino_agrees_with_bit_splicing_oracle(a: u8, b: u8, k in 1u8..=7) {
            prop_assert_eq!(domino(a, b, k).unwrap(), domino_bits(a, b, k));
        }
    }

    fn point(v: u8) -> ByteDistribution {
        ByteDistribution::point_mass(v, 100)
    }

    fn uniform() -> ByteDistribution {
        ByteDistribution::from_counts([1; 256])
    }

    #[test]
    fn point_mass_distributions_put_truth_at_rank_one() {
        let key = [0x2B, 0x7E, 0x15, 0x16];
        let per_byte: Vec<_> = key.iter().map(|&b| point(b)).collect();
        let per_domino: Vec<_> = key
            .windows(2)
            .map(|p| point(domino(p[0], p[1], 4).unwrap()))
            .collect();
        let out = combine_key(&per_byte, &per_domino, 4).unwrap();
        assert_eq!(out[0].bytes, key);
        assert_eq!(out[0].rank, 1);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn uniform_marginal_is_rescued_by_dominoes() {
        // Middle byte knows nothing; its neighbors' dominoes pin it.
        let key = [0xA1, 0x5C, 0x33];
        let per_byte = vec![point(key[0]), uniform(), point(key[2])];
        let per_domino: Vec<_> = key
            .windows(2)
            .map(|p| point(domino(p[0], p[1], 4).unwrap()))
            .collect();
        let out = combine_key(&per_byte, &per_domino, 1).unwrap();
        assert_eq!(out[0].bytes, key);
    }

    #[test]
    fn inconsistent_high_marginal_loses_to_consistent_truth() {
        // 0xEE outweighs the true 0x5C marginally, but both dominoes vote
        // for 0x5C.
        let key = [0xA1, 0x5C, 0x33];
        let mut middle = ByteDistribution::new();
        middle.add_n(0xEE, 60);
        middle.add_n(0x5C, 40);
        let per_byte = vec![point(key[0]), middle, point(key[2])];
        let per_domino: Vec<_> = key
            .windows(2)
            .map(|p| ByteDistribution::point_mass(domino(p[0], p[1], 4).unwrap(), 50))
            .collect();
        let out = combine_key(&per_byte, &per_domino, 1).unwrap();
        assert_eq!(out[0].bytes, key);
    }

    #[test]
    fn uniform_dominoes_degenerate_to_per_byte_argmax() {
        let mut d0 = ByteDistribution::new();
        d0.add_n(7, 5);
        d0.add_n(9, 3);
        let mut d1 = ByteDistribution::new();
        d1.add_n(200, 4);
        d1.add_n(3, 2);
        let per_byte = vec![d0.clone(), d1.clone()];
        let out = combine_key(&per_byte, &[uniform()], 1).unwrap();
        assert_eq!(out[0].bytes, vec![d0.argmax(), d1.argmax()]);
    }

    #[test]
    fn empty_position_reports_insufficient_data() {
        let per_byte = vec![point(1), ByteDistribution::new(), point(3)];
        let per_domino = vec![uniform(), uniform()];
        match combine_key(&per_byte, &per_domino, 1) {
            Err(Error::InsufficientData { position }) => assert_eq!(position, 1),
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }

    #[test]
    fn shape_and_parameter_validation() {
        assert!(combine_key(&[], &[], 1).is_err());
        assert!(combine_key(&[point(1)], &[uniform()], 1).is_err());
        assert!(combine_key(&[point(1), point(2)], &[uniform()], 0).is_err());
    }

    /// Exhaustive oracle for 2-byte keys: enumerate all 65536 pairs with
    /// the same left-to-right accumulation the DP uses.
    fn exhaustive_two_byte(
        per_byte: &[ByteDistribution],
        per_domino: &[ByteDistribution],
        top_n: usize,
    ) -> Vec<KeyHypothesis> {
        let mut all: Vec<(f64, Vec<u8>)> = Vec::with_capacity(65536);
        for a in 0..=255u8 {
            let sa = smoothed_log(&per_byte[0], a);
            for b in 0..=255u8 {
                let d = domino(a, b, 4).unwrap();
                let score = (sa + smoothed_log(&per_domino[0], d)) + smoothed_log(&per_byte[1], b);
                all.push((score, vec![a, b]));
            }
        }
        all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then_with(|| x.1.cmp(&y.1)));
        all.truncate(top_n);
        all.into_iter()
            .enumerate()
            .map(|(i, (score, bytes))| KeyHypothesis { bytes, score, rank: i + 1 })
            .collect()
    }

    fn random_dist(rng: &mut impl Rng, spread: usize) -> ByteDistribution {
        let mut d = ByteDistribution::new();
        for _ in 0..spread {
            d.add_n(rng.gen(), rng.gen_range(1..50));
        }
        d
    }

    #[test]
    fn dp_matches_exhaustive_enumeration_on_random_triples() {
        let mut rng = crate::rng::rng_from_seed(0xD0);
        for trial in 0..20 {
            let per_byte = vec![random_dist(&mut rng, 12), random_dist(&mut rng, 12)];
            let per_domino = vec![random_dist(&mut rng, 12)];
            let dp = combine_key(&per_byte, &per_domino, 16).unwrap();
            let oracle = exhaustive_two_byte(&per_byte, &per_domino, 16);
            assert_eq!(dp, oracle, "trial {trial} diverged from enumeration");
        }
    }

    fn full_windows(key: &[u8]) -> Vec<[ByteDistribution; 7]> {
        key.windows(2)
            .map(|p| {
                std::array::from_fn(|i| {
                    point(domino(p[0], p[1], i as u8 + 1).unwrap())
                })
            })
            .collect()
    }

    #[test]
    fn noise_free_windows_pin_interior_positions() {
        let key = [0x12, 0xF0, 0x9A, 0x44];
        let candidates: Vec<_> = key.iter().map(|_| uniform()).collect();
        let windows = full_windows(&key);
        let out = sliding_window_filter(&candidates, &windows, WindowFilterMode::Eliminate).unwrap();
        assert!(!out.vacuous);
        // Interior positions see all 7 dominoes from both sides: fully
        // pinned to the truth.
        for i in 1..key.len() - 1 {
            let survivors: Vec<u8> = (0..=255u8)
                .filter(|&v| out.distributions[i].count(v) > 0)
                .collect();
            assert_eq!(survivors, vec![key[i]], "position {i}");
        }
        // Edges keep the truth too.
        assert!(out.distributions[0].count(key[0]) > 0);
        assert!(out.distributions[3].count(key[3]) > 0);
    }

    #[test]
    fn spurious_candidate_removed_by_single_k() {
        let key = [0x0F, 0x33];
        let mut cand1 = ByteDistribution::new();
        cand1.add_n(key[1], 10);
        // Differs from 0x33 in bit 7, which the k=1 domino carries (it holds
        // bits 7..1 of the second byte); bit 0 would be invisible to every
        // backward window.
        cand1.add_n(0xB3, 10);
        let candidates = vec![point(key[0]), cand1];
        // Only the k=1 window observed.
        let mut windows = vec![std::array::from_fn(|_| ByteDistribution::new())];
        windows[0][0] = point(domino(key[0], key[1], 1).unwrap());
        let out = sliding_window_filter(&candidates, &windows, WindowFilterMode::Eliminate).unwrap();
        assert!(out.distributions[1].count(key[1]) > 0);
        assert_eq!(out.distributions[1].count(0xB3), 0);
    }

    #[test]
    fn down_weight_keeps_unsupported_values_scaled() {
        let key = [0x0F, 0x33];
        let mut cand1 = ByteDistribution::new();
        cand1.add_n(key[1], 10);
        cand1.add_n(0xB3, 10);
        let candidates = vec![point(key[0]), cand1];
        let mut windows = vec![std::array::from_fn(|_| ByteDistribution::new())];
        windows[0][0] = point(domino(key[0], key[1], 1).unwrap());
        let mode = WindowFilterMode::DownWeight { factor: 0.1 };
        let out = sliding_window_filter(&candidates, &windows, mode).unwrap();
        assert_eq!(out.distributions[1].count(key[1]), 10);
        assert_eq!(out.distributions[1].count(0xB3), 1);
    }

    #[test]
    fn empty_windows_are_vacuous() {
        let candidates = vec![uniform(), uniform()];
        let windows = vec![std::array::from_fn(|_| ByteDistribution::new())];
        let out = sliding_window_filter(&candidates, &windows, WindowFilterMode::Eliminate).unwrap();
        assert!(out.vacuous);
        assert_eq!(out.distributions, candidates);
    }

    proptest! {
        // The truth always survives when all 7 of its dominoes are
        // observed, no matter what noise accompanies them.
        #[test]
        fn truth_survives_complete_windows(key in proptest::collection::vec(any::<u8>(), 3..6),
                                           noise in proptest::collection::vec(any::<(u8, u8)>(), 0..20)) {
            let mut windows = full_windows(&key);
            for (pos, val) in noise {
                let w = pos as usize % windows.len();
                let k = (val % 7) as usize;
                windows[w][k].add(val);
            }
            let candidates: Vec<_> = key.iter().map(|_| uniform()).collect();
            let out = sliding_window_filter(&candidates, &windows, WindowFilterMode::Eliminate).unwrap();
            for (i, &b) in key.iter().enumerate() {
                prop_assert!(out.distributions[i].count(b) > 0, "truth lost at {}", i);
            }
        }
    }
}
