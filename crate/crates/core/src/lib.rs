//! Deterministic simulator of stale fill-buffer leakage on a two-thread
//! physical core, plus the sampling, covert-channel and data-recovery
//! toolkit built on top of it.
//!
//! Everything is a pure function of an explicit seed: same machine config,
//! same seed, same op streams, bit-identical traces and results. One clock
//! tick corresponds to one microsecond of simulated time.

pub mod addr;
pub mod channel;
pub mod dist;
pub mod error;
pub mod recover;
pub mod rng;
pub mod sampler;
pub mod uarch;

pub use error::Error;

/// Simulated ticks per second; 1 tick == 1 microsecond.
pub const TICKS_PER_SECOND: u64 = 1_000_000;

pub type Result<T> = std::result::Result<T, Error>;
