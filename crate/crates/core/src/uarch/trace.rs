//! Execution traces. One row per op plus rows for fill-buffer transitions
//! and microcode assists; the CSV layout is part of the tool's external
//! interface.

use crate::addr::CoreId;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: u64,
    pub core: Option<CoreId>,
    pub op: &'static str,
    pub vaddr: Option<u64>,
    pub paddr: Option<u64>,
    pub fb_slot: Option<usize>,
    pub value: Option<u8>,
    pub note: &'static str,
}

impl TraceEvent {
    pub fn new(tick: u64, op: &'static str) -> Self {
        TraceEvent {
            tick,
            core: None,
            op,
            vaddr: None,
            paddr: None,
            fb_slot: None,
            value: None,
            note: "",
        }
    }

    pub fn core(mut self, core: CoreId) -> Self {
        self.core = Some(core);
        self
    }

    pub fn vaddr(mut self, v: u64) -> Self {
        self.vaddr = Some(v);
        self
    }

    pub fn paddr(mut self, p: u64) -> Self {
        self.paddr = Some(p);
        self
    }

    pub fn fb_slot(mut self, slot: usize) -> Self {
        self.fb_slot = Some(slot);
        self
    }

    pub fn value(mut self, value: u8) -> Self {
        self.value = Some(value);
        self
    }

    pub fn note(mut self, note: &'static str) -> Self {
        self.note = note;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count_op(&self, op: &str) -> usize {
        self.events.iter().filter(|e| e.op == op).count()
    }

    pub fn count_note(&self, note: &str) -> usize {
        self.events.iter().filter(|e| e.note == note).count()
    }

    /// CSV export. Addresses and values are hex; absent fields are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,core,op,vaddr,paddr,fb_slot,value,event\n");
        for e in &self.events {
            let _ = write!(out, "{},", e.tick);
            match e.core {
                Some(c) => {
                    let _ = write!(out, "{}", c.index());
                }
                None => {}
            }
            let _ = write!(out, ",{},", e.op);
            if let Some(v) = e.vaddr {
                let _ = write!(out, "{v:#x}");
            }
            out.push(',');
            if let Some(p) = e.paddr {
                let _ = write!(out, "{p:#x}");
            }
            out.push(',');
            if let Some(s) = e.fb_slot {
                let _ = write!(out, "{s}");
            }
            out.push(',');
            if let Some(v) = e.value {
                let _ = write!(out, "{v:#04x}");
            }
            let _ = writeln!(out, ",{}", e.note);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_columns_and_hex_fields() {
        let mut t = Trace::default();
        t.push(
            TraceEvent::new(3, "read")
                .core(CoreId::Core1)
                .vaddr(0x1000)
                .paddr(0x7040)
                .fb_slot(2)
                .value(0x2A)
                .note("miss"),
        );
        t.push(TraceEvent::new(4, "assist").core(CoreId::Core0).vaddr(0x2000));
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "tick,core,op,vaddr,paddr,fb_slot,value,event");
        assert_eq!(lines.next().unwrap(), "3,1,read,0x1000,0x7040,2,0x2a,miss");
        assert_eq!(lines.next().unwrap(), "4,0,assist,0x2000,,,,");
    }

    #[test]
    fn op_and_note_counters() {
        let mut t = Trace::default();
        t.push(TraceEvent::new(0, "fb_alloc"));
        t.push(TraceEvent::new(1, "fb_alloc"));
        t.push(TraceEvent::new(2, "read").note("hit"));
        assert_eq!(t.count_op("fb_alloc"), 2);
        assert_eq!(t.count_note("hit"), 1);
    }
}
