//! Microarchitectural model: machine state, fill buffer, page tables,
//! architectural ops and the transient zombie load.

mod fill_buffer;
mod interleave;
mod machine;
mod pte;
mod trace;

pub use fill_buffer::{FillBuffer, FillBufferEntry, ReplacementPolicy};
pub use interleave::{execute_op, run_interleaved, Op, OpOutcome, Schedule, VictimProgram};
pub use machine::{
    Machine, MachineConfig, Mitigation, StoreReq, UarchGen, ZombieLeak, ZombieMode,
};
pub use pte::{PageTableEntry, PteFlags};
pub use trace::{Trace, TraceEvent};
