//! Virtual and physical addresses with the line/page arithmetic the rest of
//! the simulator leans on. Lines are 64 bytes, pages 4 KiB.

pub const LINE_BYTES: u64 = 64;
pub const PAGE_BYTES: u64 = 4096;

/// Number of cache lines in one 4 KiB page.
pub const LINES_PER_PAGE: u64 = PAGE_BYTES / LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtAddr(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysAddr(pub u64);

/// Address-space identifier; each simulated process (and the kernel) gets
/// its own page table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Asid(pub u16);

/// The two logical cores sharing one physical core. By convention the
/// victim runs on `Core0` and the attacker on `Core1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoreId {
    Core0,
    Core1,
}

impl CoreId {
    pub fn index(self) -> usize {
        match self {
            CoreId::Core0 => 0,
            CoreId::Core1 => 1,
        }
    }
}

impl VirtAddr {
    /// Byte offset within the 64-byte line: the low 6 address bits.
    pub fn byte_offset(self) -> u8 {
        (self.0 & (LINE_BYTES - 1)) as u8
    }

    /// Line index within the 4 KiB page: address bits 6..11.
    pub fn line_index(self) -> u8 {
        ((self.0 >> 6) & (LINES_PER_PAGE - 1)) as u8
    }

    pub fn page_base(self) -> u64 {
        self.0 & !(PAGE_BYTES - 1)
    }

    pub fn page_offset(self) -> u64 {
        self.0 & (PAGE_BYTES - 1)
    }

    pub fn is_page_aligned(self) -> bool {
        self.page_offset() == 0
    }
}

impl PhysAddr {
    pub fn byte_offset(self) -> u8 {
        (self.0 & (LINE_BYTES - 1)) as u8
    }

    /// Line index within the 4 KiB frame: address bits 6..11. This is the
    /// partial tag the fill buffer matches on.
    pub fn line_index(self) -> u8 {
        ((self.0 >> 6) & (LINES_PER_PAGE - 1)) as u8
    }

    /// Line-aligned base address.
    pub fn line_base(self) -> PhysAddr {
        PhysAddr(self.0 & !(LINE_BYTES - 1))
    }

    pub fn is_page_aligned(self) -> bool {
        self.0 & (PAGE_BYTES - 1) == 0
    }
}
