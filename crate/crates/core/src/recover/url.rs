//! Keyword matching and iterative URL recovery over leaked line windows.
//!
//! Leaked lines are treated as 64-byte windows. Keywords match only inside
//! one window; URLs are grown left to right by re-finding the current
//! 4-byte suffix in fresh windows and appending the byte that follows it,
//! so each reload of the victim reveals however much of the URL its line
//! offsets left visible.

use crate::error::Error;
use crate::rng::derive_seed;
use crate::sampler::{run_sampling, VariantConfig, ZombieSample};
use crate::uarch::{Machine, VictimProgram};
use crate::Result;
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_TLDS: &[&str] = &[".com", ".org", ".net", ".io", ".gov", ".edu"];

const MAX_KEYWORDS: usize = 4;
const MAX_KEYWORD_LEN: usize = 8;
const MAX_URL_LEN: usize = 128;
const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordMatch {
    /// Index into the keyword list.
    pub keyword: usize,
    pub timestamp: u64,
    /// Byte offset of the match within its line window.
    pub offset: u8,
}

/// Search reconstructed line windows for up to 4 keywords of up to 8 bytes
/// each (the transient matcher's register budget). A keyword matches only
/// when all of its bytes were observed contiguously within one window.
pub fn match_keywords(samples: &[ZombieSample], keywords: &[&[u8]]) -> Result<Vec<KeywordMatch>> {
    if keywords.len() > MAX_KEYWORDS {
        return Err(Error::parameter(format!("at most {MAX_KEYWORDS} keywords, got {}", keywords.len())));
    }
    for (i, kw) in keywords.iter().enumerate() {
        if kw.is_empty() || kw.len() > MAX_KEYWORD_LEN {
            return Err(Error::parameter(format!(
                "keyword {i} must be 1..={MAX_KEYWORD_LEN} bytes, got {}",
                kw.len()
            )));
        }
    }

    let mut windows: BTreeMap<u64, [Option<u8>; 64]> = BTreeMap::new();
    for s in samples {
        windows.entry(s.timestamp).or_insert([None; 64])[(s.byte_index & 0x3F) as usize] =
            Some(s.value);
    }

    let mut out = Vec::new();
    for (&ts, window) in &windows {
        for (ki, kw) in keywords.iter().enumerate() {
            for offset in 0..=(64 - kw.len()) {
                let hit = kw
                    .iter()
                    .enumerate()
                    .all(|(j, &b)| window[offset + j] == Some(b));
                if hit {
                    out.push(KeywordMatch { keyword: ki, timestamp: ts, offset: offset as u8 });
                }
            }
        }
    }
    Ok(out)
}

/// Bytes allowed to extend a URL candidate.
fn url_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'/' | b'_' | b'~' | b':' | b'%')
}

fn ends_with_tld(candidate: &str, tlds: &[&str]) -> bool {
    tlds.iter().any(|t| candidate.len() > t.len() && candidate.ends_with(t))
}

/// Grow `candidates` using the 64-byte windows in `lines`; returns true if
/// anything changed. Every window is scanned for fresh "www." starts and
/// for extensions of existing candidates' last four bytes.
fn extend_candidates(
    candidates: &mut BTreeSet<String>,
    done: &mut Vec<String>,
    lines: &[[u8; 64]],
    tlds: &[&str],
) -> bool {
    let mut changed = false;
    for w in lines {
        if w.windows(4).any(|q| q == b"www.") && candidates.len() < MAX_CANDIDATES {
            changed |= candidates.insert("www.".to_string());
        }
    }
    loop {
        let mut grew = false;
        for cand in std::mem::take(candidates) {
            if ends_with_tld(&cand, tlds) {
                if !done.contains(&cand) {
                    done.push(cand);
                    changed = true;
                }
                continue;
            }
            if cand.len() >= MAX_URL_LEN {
                candidates.insert(cand);
                continue;
            }
            let suffix = &cand.as_bytes()[cand.len() - 4..];
            let mut nexts = BTreeSet::new();
            for w in lines {
                for o in 0..60 {
                    if &w[o..o + 4] == suffix && url_byte(w[o + 4]) {
                        nexts.insert(w[o + 4]);
                    }
                }
            }
            if nexts.is_empty() {
                candidates.insert(cand);
            } else {
                grew = true;
                changed = true;
                for nb in nexts {
                    if candidates.len() < MAX_CANDIDATES {
                        let mut ext = cand.clone();
                        ext.push(nb as char);
                        candidates.insert(ext);
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }
    changed
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlRecovery {
    /// First URL completed down to a known TLD, if any.
    pub url: Option<String>,
    pub reloads_used: u64,
    /// Unfinished candidate prefixes at the end of the run.
    pub candidates: Vec<String>,
}

/// Iteratively recover a browsed URL. `reload_program` builds the victim's
/// op schedule for each reload; sampling accumulates across reloads and
/// candidate growth never discards a longer prefix for a shorter one.
pub fn recover_url(
    m: &mut Machine,
    vcfg: &VariantConfig,
    mut reload_program: impl FnMut(u64) -> VictimProgram,
    reload_duration: u64,
    max_reloads: u64,
    tlds: &[&str],
    seed: u64,
) -> Result<UrlRecovery> {
    let mut candidates: BTreeSet<String> = BTreeSet::new();
    let mut done: Vec<String> = Vec::new();
    let mut lines: Vec<[u8; 64]> = Vec::new();
    let mut reloads_used = 0;

    for reload in 0..max_reloads {
        let program = reload_program(reload);
        let run = run_sampling(
            m,
            vcfg,
            Some(&program),
            None,
            reload_duration,
            derive_seed(seed, format!("reload-{reload}")),
        )?;
        reloads_used = reload + 1;
        lines.extend(run.lines.iter().map(|l| l.line));
        extend_candidates(&mut candidates, &mut done, &lines, tlds);
        if !done.is_empty() {
            break;
        }
    }

    Ok(UrlRecovery {
        url: done.first().cloned(),
        reloads_used,
        candidates: candidates.into_iter().collect(),
    })
}
