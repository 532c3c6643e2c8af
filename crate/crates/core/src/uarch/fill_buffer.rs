//! The line-fill buffer: a small array of line-sized entries shared by both
//! logical cores of the physical core. Entries are allocated for loads that
//! miss L1 and for non-temporal stores; entry data persists after the entry
//! is freed, until the slot is reallocated. That persistence is the leak.

use crate::addr::{CoreId, PhysAddr};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How a slot is picked when a new entry is allocated.
///
/// `PseudoLru` is the default: mostly least-recently-used, but with
/// probability `reuse_p` it re-allocates the most-recently-touched free slot
/// instead (temporal reuse). The reuse term is what leaves stale entries
/// behind after a stuffing pass; `RoundRobin` exists so tests and
/// mitigations can get full-coverage behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplacementPolicy {
    RoundRobin,
    PseudoLru { reuse_p: f64 },
}

impl ReplacementPolicy {
    pub const DEFAULT_REUSE_P: f64 = 0.3;
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        ReplacementPolicy::PseudoLru { reuse_p: Self::DEFAULT_REUSE_P }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntryState {
    /// In flight; a non-temporal store holds its entry until `release_at`.
    Allocated { release_at: u64 },
    Freed,
}

#[derive(Debug, Clone)]
pub struct FillBufferEntry {
    /// Line-index bits (bits 6..11) of the physical address. This is all the
    /// tag a transient load gets matched against.
    pub partial_tag: u8,
    /// Full physical line address, kept as ground truth for inspection.
    pub line: PhysAddr,
    pub data: [u8; 64],
    pub owner: CoreId,
    state: EntryState,
    fill_seq: u64,
    last_seq: u64,
}

impl FillBufferEntry {
    pub fn is_allocated(&self) -> bool {
        matches!(self.state, EntryState::Allocated { .. })
    }

    /// Monotonic generation stamp assigned when the entry was filled.
    pub fn fill_seq(&self) -> u64 {
        self.fill_seq
    }
}

#[derive(Debug, Clone)]
pub struct FillBuffer {
    slots: Vec<Option<FillBufferEntry>>,
    next_rr: usize,
    seq: u64,
}

impl FillBuffer {
    pub fn new(capacity: usize) -> Self {
        FillBuffer { slots: vec![None; capacity], next_rr: 0, seq: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, idx: usize) -> Option<&FillBufferEntry> {
        self.slots.get(idx).and_then(|s| s.as_ref())
    }

    pub fn allocated_count(&self) -> usize {
        self.slots.iter().flatten().filter(|e| e.is_allocated()).count()
    }

    pub fn occupied_count(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    /// Fill-generation stamps per slot, for before/after comparisons.
    pub fn fill_seqs(&self) -> Vec<Option<u64>> {
        self.slots.iter().map(|s| s.as_ref().map(|e| e.fill_seq)).collect()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Release in-flight store entries whose hold time has elapsed. Freed in
    /// (release time, slot index) order so recency stamps are deterministic.
    pub fn expire_until(&mut self, now: u64) -> Vec<usize> {
        let mut due: Vec<(u64, usize)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Some(e) => match e.state {
                    EntryState::Allocated { release_at } if release_at <= now => {
                        Some((release_at, i))
                    }
                    _ => None,
                },
                None => None,
            })
            .collect();
        due.sort_unstable();
        let mut freed = Vec::with_capacity(due.len());
        for (_, idx) in due {
            let seq = self.next_seq();
            let entry = self.slots[idx].as_mut().unwrap();
            entry.state = EntryState::Freed;
            entry.last_seq = seq;
            freed.push(idx);
        }
        freed
    }

    /// Pick a slot for a new allocation among the non-allocated ones.
    /// Returns `None` when every slot holds an in-flight entry.
    pub fn choose_slot(&mut self, policy: ReplacementPolicy, rng: &mut ChaCha8Rng) -> Option<usize> {
        let free: Vec<usize> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !matches!(s, Some(e) if e.is_allocated()))
            .map(|(i, _)| i)
            .collect();
        if free.is_empty() {
            return None;
        }
        match policy {
            ReplacementPolicy::RoundRobin => {
                let cap = self.capacity();
                for step in 0..cap {
                    let idx = (self.next_rr + step) % cap;
                    if free.contains(&idx) {
                        self.next_rr = (idx + 1) % cap;
                        return Some(idx);
                    }
                }
                unreachable!("free list is non-empty");
            }
            ReplacementPolicy::PseudoLru { reuse_p } => {
                let reuse = rng.gen_bool(reuse_p.clamp(0.0, 1.0));
                if reuse {
                    // Most recently touched freed slot, if any slot has data.
                    if let Some(&idx) = free
                        .iter()
                        .filter(|&&i| self.slots[i].is_some())
                        .max_by_key(|&&i| (self.slots[i].as_ref().unwrap().last_seq, usize::MAX - i))
                    {
                        return Some(idx);
                    }
                }
                // LRU: never-filled slots first, then oldest stamp; ties to
                // the lowest index.
                let idx = *free
                    .iter()
                    .min_by_key(|&&i| (self.slots[i].as_ref().map_or(0, |e| e.last_seq), i))
                    .unwrap();
                Some(idx)
            }
        }
    }

    /// Free the in-flight entry with the earliest release time; models the
    /// stall a store suffers when the buffer is saturated. Returns the slot
    /// that was released.
    pub fn reclaim_oldest_inflight(&mut self) -> Option<usize> {
        let idx = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Some(e) => match e.state {
                    EntryState::Allocated { release_at } => Some((release_at, i)),
                    EntryState::Freed => None,
                },
                None => None,
            })
            .min()?
            .1;
        let seq = self.next_seq();
        let entry = self.slots[idx].as_mut().unwrap();
        entry.state = EntryState::Freed;
        entry.last_seq = seq;
        Some(idx)
    }

    /// Install a new entry. The caller picks the slot via `choose_slot` or
    /// `reclaim_oldest_inflight`.
    pub fn fill(
        &mut self,
        slot: usize,
        line: PhysAddr,
        data: [u8; 64],
        owner: CoreId,
        release_at: u64,
    ) {
        let seq = self.next_seq();
        self.slots[slot] = Some(FillBufferEntry {
            partial_tag: line.line_index(),
            line: line.line_base(),
            data,
            owner,
            state: EntryState::Allocated { release_at },
            fill_seq: seq,
            last_seq: seq,
        });
    }

    /// Mark a load entry complete. Data persists; only the state and the
    /// recency stamp change.
    pub fn free(&mut self, slot: usize) {
        let seq = self.next_seq();
        let entry = self.slots[slot].as_mut().expect("freeing an empty slot");
        entry.state = EntryState::Freed;
        entry.last_seq = seq;
    }

    /// Slot of an in-flight entry for `line`, if any; loads to that line
    /// merge with it instead of allocating a second entry.
    pub fn inflight_slot_for_line(&self, line: PhysAddr) -> Option<usize> {
        self.slots.iter().enumerate().find_map(|(i, s)| match s {
            Some(e) if e.is_allocated() && e.line == line.line_base() => Some(i),
            _ => None,
        })
    }

    /// Transient selection: among entries whose partial tag matches, the most
    /// recently filled or freed wins; with no tag match, the most recent
    /// entry overall. `allocated_eligible` controls whether in-flight store
    /// entries may be returned.
    pub fn select_stale(&self, partial_tag: u8, allocated_eligible: bool) -> Option<usize> {
        let eligible = |e: &FillBufferEntry| allocated_eligible || !e.is_allocated();
        let best = |pred: &dyn Fn(&FillBufferEntry) -> bool| -> Option<usize> {
            self.slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| match s {
                    Some(e) if eligible(e) && pred(e) => Some((e.last_seq, i)),
                    _ => None,
                })
                .max()
                .map(|(_, i)| i)
        };
        best(&|e| e.partial_tag == partial_tag).or_else(|| best(&|_| true))
    }
}
