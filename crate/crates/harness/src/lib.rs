//! Experiment harness and CLI around the fill-buffer leakage simulator.
//!
//! Scenario files (JSON) describe a machine, a variant, a victim, and an
//! attacker; each subcommand runs one experiment and emits a deterministic
//! report keyed by the scenario digest and seed.

pub mod calibrate;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod report;
pub mod scenario;
pub mod victims;

pub use error::HarnessError;

pub type Result<T> = std::result::Result<T, HarnessError>;
