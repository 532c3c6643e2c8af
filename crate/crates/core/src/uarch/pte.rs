use crate::addr::PhysAddr;

/// Page-table entry flags. Huge pages only differ by the flag here; mapping
/// granularity stays 4 KiB and the tag-matching behaviour is identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PteFlags {
    pub present: bool,
    pub user_accessible: bool,
    pub accessed: bool,
    pub dirty: bool,
    pub huge: bool,
}

impl PteFlags {
    /// Ordinary user data page, not yet accessed.
    pub fn user() -> Self {
        PteFlags { present: true, user_accessible: true, accessed: false, dirty: false, huge: false }
    }

    /// Supervisor-only mapping, as used for the kernel's direct-physical map.
    pub fn supervisor() -> Self {
        PteFlags { present: true, user_accessible: false, accessed: false, dirty: false, huge: true }
    }

    pub fn accessed(mut self, accessed: bool) -> Self {
        self.accessed = accessed;
        self
    }

    pub fn huge(mut self, huge: bool) -> Self {
        self.huge = huge;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageTableEntry {
    pub frame: PhysAddr,
    pub flags: PteFlags,
}
