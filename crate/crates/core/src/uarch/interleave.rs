//! Deterministic interleaved execution of a victim stream (core 0) and an
//! attacker stream (core 1) on one shared machine. This is the only
//! concurrency in the simulator: a seeded merge of two op lists.

use super::machine::{Machine, ZombieLeak, ZombieMode};
use super::trace::Trace;
use crate::addr::{Asid, CoreId, VirtAddr};
use crate::error::Error;
use crate::rng::rng_from_seed;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Read { asid: Asid, v: VirtAddr },
    SpecRead { asid: Asid, v: VirtAddr },
    Flush { asid: Asid, v: VirtAddr },
    StoreNt { asid: Asid, v: VirtAddr, data: [u8; 64] },
    Zombie { asid: Asid, v: VirtAddr, mode: ZombieMode },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpOutcome {
    Byte(u8),
    Leak(ZombieLeak),
    Latency(u64),
    Done,
    Fault(Error),
}

impl OpOutcome {
    /// Ticks the op occupies in an interleaved run.
    pub fn cost(&self) -> u64 {
        match self {
            OpOutcome::Latency(l) => *l,
            _ => 1,
        }
    }
}

/// Execute one op on behalf of `core`. Faults do not abort a run; they are
/// recorded in the trace and surfaced as outcomes.
pub fn execute_op(m: &mut Machine, core: CoreId, op: &Op) -> OpOutcome {
    let result = match op {
        Op::Read { asid, v } => m.read_arch(core, *asid, *v).map(OpOutcome::Byte),
        Op::SpecRead { asid, v } => m.spec_read(core, *asid, *v).map(|_| OpOutcome::Done),
        Op::Flush { asid, v } => m.clflush(core, *asid, *v).map(|_| OpOutcome::Done),
        Op::StoreNt { asid, v, data } => m.store_nt(core, *asid, *v, *data).map(OpOutcome::Latency),
        Op::Zombie { asid, v, mode } => m.zombie_load(core, *asid, *v, *mode).map(OpOutcome::Leak),
    };
    result.unwrap_or_else(OpOutcome::Fault)
}

/// Interleaving order for `run_interleaved`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Strict alternation, victim first.
    Alternating,
    /// Seeded coin per slot; `victim_share` is the probability the next op
    /// comes from the victim stream.
    Seeded { seed: u64, victim_share: f64 },
}

/// Run both streams to completion on the shared machine and return the
/// trace. The victim executes on core 0, the attacker on core 1; when one
/// stream is exhausted the other drains. Identical machine, streams,
/// schedule and seed give a bit-identical trace.
pub fn run_interleaved(m: &mut Machine, victim: &[Op], attacker: &[Op], schedule: Schedule) -> Trace {
    m.enable_trace();
    let mut rng = match schedule {
        Schedule::Seeded { seed, .. } => Some(rng_from_seed(seed)),
        Schedule::Alternating => None,
    };
    let mut vi = 0;
    let mut ai = 0;
    let mut slot = 0u64;
    while vi < victim.len() || ai < attacker.len() {
        let take_victim = if vi >= victim.len() {
            false
        } else if ai >= attacker.len() {
            true
        } else {
            match schedule {
                Schedule::Alternating => slot % 2 == 0,
                Schedule::Seeded { victim_share, .. } => {
                    rng.as_mut().unwrap().gen_bool(victim_share.clamp(0.0, 1.0))
                }
            }
        };
        let (core, op) = if take_victim {
            vi += 1;
            (CoreId::Core0, &victim[vi - 1])
        } else {
            ai += 1;
            (CoreId::Core1, &attacker[ai - 1])
        };
        let outcome = execute_op(m, core, op);
        m.advance(outcome.cost());
        slot += 1;
    }
    m.take_trace()
}

/// A victim workload on a time base: each step's ops run on consecutive
/// ticks starting at the step's start tick. The sampling driver merges
/// these with attacker attempts by tick.
#[derive(Debug, Clone)]
pub struct VictimProgram {
    pub steps: Vec<Vec<Op>>,
    starts: Vec<u64>,
}

impl VictimProgram {
    /// Evenly spaced steps: step i starts at `i * step_interval`.
    pub fn new(steps: Vec<Vec<Op>>, step_interval: u64) -> Self {
        let starts = (0..steps.len() as u64).map(|i| i * step_interval).collect();
        VictimProgram { steps, starts }
    }

    /// Explicitly scheduled steps; they are sorted by start tick.
    pub fn at_ticks(mut timed: Vec<(u64, Vec<Op>)>) -> Self {
        timed.sort_by_key(|(t, _)| *t);
        let (starts, steps) = timed.into_iter().unzip();
        VictimProgram { steps, starts }
    }

    pub fn step_start(&self, idx: usize) -> u64 {
        self.starts[idx]
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}
