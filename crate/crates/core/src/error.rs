use crate::addr::{Asid, VirtAddr};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("page fault: {asid:?} {vaddr:#x} not mapped", vaddr = .vaddr.0)]
    PageFault { asid: Asid, vaddr: VirtAddr },

    #[error("permission fault: user access to supervisor page {vaddr:#x}", vaddr = .vaddr.0)]
    PermissionFault { asid: Asid, vaddr: VirtAddr },

    #[error("mapping conflict: {asid:?} page {page:#x} already mapped")]
    MappingExists { asid: Asid, page: u64 },

    #[error("bad mapping: {0}")]
    BadMapping(String),

    #[error("no stale data: fill buffer has never been filled")]
    NoStaleData,

    #[error("zombie load precondition violated: {0}")]
    ZombieSetup(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data at byte position {position}")]
    InsufficientData { position: usize },

    #[error("no signal above noise floor")]
    NoSignal,
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
