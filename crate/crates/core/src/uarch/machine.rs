//! One simulated physical core: two hardware threads, a shared L1, a shared
//! fill buffer, per-ASID page tables and a flat line-granular memory.
//!
//! Architectural rules are enforced strictly (permission checks, accessed
//! and dirty bits, microcode assists). The one deliberate hole is
//! `zombie_load`: a faulting or assisted load that transiently forwards
//! whatever stale fill-buffer entry best matches the partial address tag.

use super::fill_buffer::{FillBuffer, FillBufferEntry, ReplacementPolicy};
use super::pte::{PageTableEntry, PteFlags};
use super::trace::{Trace, TraceEvent};
use crate::addr::{Asid, CoreId, PhysAddr, VirtAddr, LINE_BYTES, PAGE_BYTES};
use crate::error::Error;
use crate::rng::rng_from_seed;
use crate::Result;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Core generation; fixes the number of fill-buffer entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UarchGen {
    PreSkylake,
    Skylake,
}

impl UarchGen {
    pub fn fb_entries(self) -> usize {
        match self {
            UarchGen::PreSkylake => 10,
            UarchGen::Skylake => 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MachineConfig {
    pub uarch: UarchGen,
    /// Overrides the generation's fill-buffer entry count when set.
    pub fb_entries: Option<usize>,
    /// Ticks a non-temporal store occupies its entry.
    pub c_store: u64,
    /// Extra ticks a store stalls when the buffer is saturated.
    pub c_stall: u64,
    pub replacement: ReplacementPolicy,
    pub policy_seed: u64,
    /// Whether an in-flight (still allocated) entry may satisfy a zombie
    /// load. Default true: store data is observable before release.
    pub stale_allocated_eligible: bool,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            uarch: UarchGen::Skylake,
            fb_entries: None,
            c_store: 1,
            c_stall: 5,
            replacement: ReplacementPolicy::default(),
            policy_seed: 0,
            stale_allocated_eligible: true,
        }
    }
}

impl MachineConfig {
    pub fn fb_capacity(&self) -> usize {
        self.fb_entries.unwrap_or_else(|| self.uarch.fb_entries())
    }
}

/// Which transient-execution window a zombie load runs in.
///
/// `KernelAlias`: the load targets a supervisor mapping and faults.
/// `ClearedAccessed`: the load targets a user mapping whose accessed bit is
/// clear, forcing a microcode assist that cancels the load after forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZombieMode {
    KernelAlias,
    ClearedAccessed,
}

/// Result of a zombie load: the transiently forwarded byte and the slot it
/// came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZombieLeak {
    pub value: u8,
    pub source_entry: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mitigation {
    /// Flush the whole L1; leaves the fill buffer untouched.
    FlushL1,
    /// Issue n dummy loads to overwrite fill-buffer slots.
    LoadStuffing(usize),
    /// FlushL1 followed by stuffing with as many loads as there are entries.
    Both,
}

/// A single store request for batch issue.
#[derive(Debug, Clone)]
pub struct StoreReq {
    pub core: CoreId,
    pub asid: Asid,
    pub v: VirtAddr,
    pub data: [u8; 64],
}

/// Physical range used for mitigation dummy lines; outside any mappable
/// frame the harness hands out.
const DUMMY_LINE_BASE: u64 = 0xFFFF_0000_0000;

pub struct Machine {
    cfg: MachineConfig,
    clock: u64,
    fb: FillBuffer,
    l1: BTreeSet<u64>,
    page_tables: BTreeMap<Asid, BTreeMap<u64, PageTableEntry>>,
    memory: BTreeMap<u64, [u8; 64]>,
    policy_rng: ChaCha8Rng,
    assists: u64,
    dummy_fills: u64,
    trace: Option<Trace>,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Self {
        let capacity = cfg.fb_capacity();
        let policy_rng = rng_from_seed(cfg.policy_seed);
        Machine {
            cfg,
            clock: 0,
            fb: FillBuffer::new(capacity),
            l1: BTreeSet::new(),
            page_tables: BTreeMap::new(),
            memory: BTreeMap::new(),
            policy_rng,
            assists: 0,
            dummy_fills: 0,
            trace: None,
        }
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn advance(&mut self, ticks: u64) {
        self.clock += ticks;
    }

    /// Move the clock forward to `tick`; never backwards.
    pub fn advance_to(&mut self, tick: u64) {
        if tick > self.clock {
            self.clock = tick;
        }
    }

    pub fn fill_buffer(&self) -> &FillBuffer {
        &self.fb
    }

    pub fn assist_count(&self) -> u64 {
        self.assists
    }

    pub fn l1_contains(&self, line: PhysAddr) -> bool {
        self.l1.contains(&line.line_base().0)
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Trace::default());
        }
    }

    pub fn take_trace(&mut self) -> Trace {
        self.trace.take().unwrap_or_default()
    }

    fn record(&mut self, event: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(event);
        }
    }

    fn ev(&self, op: &'static str) -> TraceEvent {
        TraceEvent::new(self.clock, op)
    }

    // ---- memory and mappings -------------------------------------------

    /// Install a 4 KiB mapping. Fails on misaligned addresses and on any
    /// overlap with an existing mapping in the same address space.
    pub fn map_page(&mut self, asid: Asid, v: VirtAddr, frame: PhysAddr, flags: PteFlags) -> Result<()> {
        if !v.is_page_aligned() {
            return Err(Error::BadMapping(format!("vaddr {:#x} not page-aligned", v.0)));
        }
        if !frame.is_page_aligned() {
            return Err(Error::BadMapping(format!("frame {:#x} not page-aligned", frame.0)));
        }
        let table = self.page_tables.entry(asid).or_default();
        if table.contains_key(&v.page_base()) {
            return Err(Error::MappingExists { asid, page: v.page_base() });
        }
        table.insert(v.page_base(), PageTableEntry { frame, flags });
        self.record(TraceEvent::new(self.clock, "map").vaddr(v.0).paddr(frame.0));
        Ok(())
    }

    pub fn pte(&self, asid: Asid, v: VirtAddr) -> Option<PageTableEntry> {
        self.page_tables.get(&asid)?.get(&v.page_base()).copied()
    }

    fn translate(&self, asid: Asid, v: VirtAddr) -> Result<PageTableEntry> {
        match self.pte(asid, v) {
            Some(pte) if pte.flags.present => Ok(pte),
            _ => Err(Error::PageFault { asid, vaddr: v }),
        }
    }

    fn phys(&self, pte: &PageTableEntry, v: VirtAddr) -> PhysAddr {
        PhysAddr(pte.frame.0 | (v.0 & (PAGE_BYTES - 1)))
    }

    /// Direct memory poke for scenario setup; no cache or buffer effects.
    pub fn write_line(&mut self, line: PhysAddr, data: [u8; 64]) -> Result<()> {
        if line.0 & (LINE_BYTES - 1) != 0 {
            return Err(Error::parameter(format!("line address {:#x} not 64-byte aligned", line.0)));
        }
        self.memory.insert(line.0, data);
        Ok(())
    }

    pub fn read_line(&self, line: PhysAddr) -> [u8; 64] {
        self.memory.get(&line.line_base().0).copied().unwrap_or([0; 64])
    }

    fn phys_byte(&self, p: PhysAddr) -> u8 {
        self.read_line(p)[p.byte_offset() as usize]
    }

    /// Set the accessed (and optionally dirty) bit, recording the microcode
    /// assist the page walk falls back to.
    fn assist_if_needed(&mut self, asid: Asid, v: VirtAddr, core: CoreId, dirty: bool) {
        let pte = self
            .page_tables
            .get_mut(&asid)
            .and_then(|t| t.get_mut(&v.page_base()))
            .expect("assist on translated page");
        let needs = !pte.flags.accessed || (dirty && !pte.flags.dirty);
        if needs {
            pte.flags.accessed = true;
            if dirty {
                pte.flags.dirty = true;
            }
            self.assists += 1;
            self.record(self.ev("assist").core(core).vaddr(v.0));
        }
    }

    /// Pick a fill-buffer slot, stalling (reclaiming the oldest in-flight
    /// entry) when every slot is allocated. Returns (slot, stalled).
    fn take_slot(&mut self) -> (usize, bool) {
        match self.fb.choose_slot(self.cfg.replacement, &mut self.policy_rng) {
            Some(slot) => (slot, false),
            None => {
                let slot = self.fb.reclaim_oldest_inflight().expect("saturated buffer has in-flight entries");
                self.record(self.ev("fb_free").fb_slot(slot).note("stall"));
                (slot, true)
            }
        }
    }

    fn expire_fb(&mut self) {
        let freed = self.fb.expire_until(self.clock);
        for slot in freed {
            self.record(self.ev("fb_free").fb_slot(slot));
        }
    }

    // ---- architectural ops ---------------------------------------------

    /// Architectural load of one byte, from user mode. Misses allocate a
    /// fill-buffer entry whose data persists after completion.
    pub fn read_arch(&mut self, core: CoreId, asid: Asid, v: VirtAddr) -> Result<u8> {
        let pte = match self.translate(asid, v) {
            Ok(p) => p,
            Err(e) => {
                self.record(self.ev("read").core(core).vaddr(v.0).note("fault-page"));
                return Err(e);
            }
        };
        if !pte.flags.user_accessible {
            self.record(self.ev("read").core(core).vaddr(v.0).note("fault-perm"));
            return Err(Error::PermissionFault { asid, vaddr: v });
        }
        self.assist_if_needed(asid, v, core, false);
        let p = self.phys(&pte, v);
        let line = p.line_base();
        let value = self.phys_byte(p);
        self.expire_fb();
        if self.l1.contains(&line.0) {
            self.record(self.ev("read").core(core).vaddr(v.0).paddr(p.0).value(value).note("hit"));
            return Ok(value);
        }
        if let Some(slot) = self.fb.inflight_slot_for_line(line) {
            // The line is already being transferred; merge with that entry.
            self.l1.insert(line.0);
            self.record(
                self.ev("read").core(core).vaddr(v.0).paddr(p.0).fb_slot(slot).value(value).note("merge"),
            );
            return Ok(value);
        }
        let (slot, _) = self.take_slot();
        let data = self.read_line(line);
        self.fb.fill(slot, line, data, core, self.clock);
        self.fb.free(slot);
        self.l1.insert(line.0);
        self.record(
            self.ev("read").core(core).vaddr(v.0).paddr(p.0).fb_slot(slot).value(value).note("miss"),
        );
        self.record(self.ev("fb_alloc").core(core).paddr(line.0).fb_slot(slot));
        Ok(value)
    }

    /// Speculative load: allocates a fill-buffer entry on an L1 miss and
    /// nothing else. No fault is raised, no accessed or dirty bit is set and
    /// the line is not installed in L1.
    pub fn spec_read(&mut self, core: CoreId, asid: Asid, v: VirtAddr) -> Result<()> {
        let pte = match self.translate(asid, v) {
            Ok(p) => p,
            // Squashed before it could do anything.
            Err(_) => return Ok(()),
        };
        let p = self.phys(&pte, v);
        let line = p.line_base();
        self.expire_fb();
        if self.l1.contains(&line.0) || self.fb.inflight_slot_for_line(line).is_some() {
            self.record(self.ev("spec_read").core(core).vaddr(v.0).paddr(p.0).note("hit"));
            return Ok(());
        }
        let (slot, _) = self.take_slot();
        let data = self.read_line(line);
        self.fb.fill(slot, line, data, core, self.clock);
        self.fb.free(slot);
        self.record(self.ev("spec_read").core(core).vaddr(v.0).paddr(p.0).fb_slot(slot).note("miss"));
        self.record(self.ev("fb_alloc").core(core).paddr(line.0).fb_slot(slot));
        Ok(())
    }

    /// Flush one line from L1. Flushing a non-cached line is a no-op.
    pub fn clflush(&mut self, core: CoreId, asid: Asid, v: VirtAddr) -> Result<()> {
        let pte = match self.translate(asid, v) {
            Ok(p) => p,
            Err(e) => {
                self.record(self.ev("flush").core(core).vaddr(v.0).note("fault-page"));
                return Err(e);
            }
        };
        let line = self.phys(&pte, v).line_base();
        let present = self.l1.remove(&line.0);
        let note = if present { "evict" } else { "noop" };
        self.record(self.ev("flush").core(core).vaddr(v.0).paddr(line.0).note(note));
        Ok(())
    }

    /// Non-temporal store of a full line. Bypasses L1 (invalidating any
    /// cached copy), writes memory, and occupies a fill-buffer entry for
    /// `c_store` ticks. Returns the store's latency in ticks: `c_store`,
    /// plus `c_stall` when the buffer was saturated at issue.
    pub fn store_nt(&mut self, core: CoreId, asid: Asid, v: VirtAddr, data: [u8; 64]) -> Result<u64> {
        if v.0 & (LINE_BYTES - 1) != 0 {
            return Err(Error::parameter(format!("nt store target {:#x} not line-aligned", v.0)));
        }
        let pte = match self.translate(asid, v) {
            Ok(p) => p,
            Err(e) => {
                self.record(self.ev("store").core(core).vaddr(v.0).note("fault-page"));
                return Err(e);
            }
        };
        if !pte.flags.user_accessible {
            self.record(self.ev("store").core(core).vaddr(v.0).note("fault-perm"));
            return Err(Error::PermissionFault { asid, vaddr: v });
        }
        self.assist_if_needed(asid, v, core, true);
        let line = self.phys(&pte, v).line_base();
        self.expire_fb();
        let (slot, stalled) = self.take_slot();
        self.memory.insert(line.0, data);
        self.l1.remove(&line.0);
        self.fb.fill(slot, line, data, core, self.clock + self.cfg.c_store);
        let latency = if stalled { self.cfg.c_store + self.cfg.c_stall } else { self.cfg.c_store };
        let note = if stalled { "stall" } else { "" };
        self.record(self.ev("store").core(core).vaddr(v.0).paddr(line.0).fb_slot(slot).note(note));
        self.record(self.ev("fb_alloc").core(core).paddr(line.0).fb_slot(slot));
        Ok(latency)
    }

    /// Issue a batch of concurrent stores at the current tick and return the
    /// total latency: n * c_store while the batch fits the buffer, plus
    /// c_stall per store beyond capacity.
    pub fn store_batch(&mut self, reqs: &[StoreReq]) -> Result<u64> {
        let mut total = 0;
        for r in reqs {
            total += self.store_nt(r.core, r.asid, r.v, r.data)?;
        }
        self.advance(total);
        Ok(total)
    }

    // ---- transient op ---------------------------------------------------

    /// A zombie load: a load that faults (supervisor target) or requires a
    /// microcode assist (cleared accessed bit) and, before being squashed,
    /// transiently forwards a byte from a stale fill-buffer entry matched on
    /// partial address tag. Changes no architectural state.
    pub fn zombie_load(&mut self, core: CoreId, asid: Asid, v: VirtAddr, mode: ZombieMode) -> Result<ZombieLeak> {
        let pte = self.translate(asid, v)?;
        match mode {
            ZombieMode::KernelAlias => {
                if pte.flags.user_accessible {
                    return Err(Error::ZombieSetup("kernel-alias mode needs a supervisor mapping"));
                }
            }
            ZombieMode::ClearedAccessed => {
                if pte.flags.accessed {
                    return Err(Error::ZombieSetup("cleared-accessed mode needs a clear accessed bit"));
                }
            }
        }
        self.expire_fb();
        let slot = match self.fb.select_stale(v.line_index(), self.cfg.stale_allocated_eligible) {
            Some(s) => s,
            None => {
                self.record(self.ev("zombie").core(core).vaddr(v.0).note("nostale"));
                return Err(Error::NoStaleData);
            }
        };
        let entry = self.fb.slot(slot).expect("selected slot is occupied");
        let value = entry.data[v.byte_offset() as usize];
        self.record(
            self.ev("zombie").core(core).vaddr(v.0).fb_slot(slot).value(value).note("transient"),
        );
        Ok(ZombieLeak { value, source_entry: slot })
    }

    /// Inspect the entry a leak came from (transient code sees the whole
    /// line the entry holds).
    pub fn leak_entry(&self, leak: &ZombieLeak) -> &FillBufferEntry {
        self.fb.slot(leak.source_entry).expect("leak source slot occupied")
    }

    // ---- mitigation ------------------------------------------------------

    /// Apply a mitigation and return the fraction of fill-buffer slots that
    /// still hold data from before the call.
    pub fn apply_mitigation(&mut self, m: Mitigation) -> Result<f64> {
        let capacity = self.fb.capacity();
        let stuff_n = match m {
            Mitigation::FlushL1 => 0,
            Mitigation::LoadStuffing(n) => n,
            Mitigation::Both => capacity,
        };
        if stuff_n > capacity {
            return Err(Error::parameter(format!(
                "stuffing {stuff_n} loads exceeds the {capacity}-entry buffer"
            )));
        }
        let before = self.fb.fill_seqs();
        if matches!(m, Mitigation::FlushL1 | Mitigation::Both) {
            self.l1.clear();
            self.record(self.ev("mitigate").note("flush-l1"));
        }
        self.expire_fb();
        for _ in 0..stuff_n {
            let line = PhysAddr(DUMMY_LINE_BASE + self.dummy_fills * LINE_BYTES);
            self.dummy_fills += 1;
            let (slot, _) = self.take_slot();
            self.fb.fill(slot, line, [0; 64], CoreId::Core0, self.clock);
            self.fb.free(slot);
            self.l1.insert(line.0);
            self.record(self.ev("mitigate").paddr(line.0).fb_slot(slot).note("stuff"));
        }
        let after = self.fb.fill_seqs();
        let stale = before.iter().filter(|b| b.is_some()).count();
        let survivors = before
            .iter()
            .zip(after.iter())
            .filter(|(b, a)| b.is_some() && a == b)
            .count();
        // Residual = fraction of the stale entries present beforehand that
        // the mitigation failed to overwrite. An empty buffer has nothing
        // left to leak.
        if stale == 0 {
            return Ok(0.0);
        }
        Ok(survivors as f64 / stale as f64)
    }
}
