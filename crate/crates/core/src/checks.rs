//! Target modes, sanity-check identifiers and the crash-site registry.
//!
//! Each emulated crash site is guarded in hardened mode by exactly one check,
//! and each such check carries the upstream NTFS3 commit whose patch it
//! mirrors. [`assert_registry`] verifies that the pairing is bijective.

use std::fmt;
use std::str::FromStr;

use crate::reader::BoundsFault;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// All published patches applied.
    Hardened,
    /// Patches reverted; would-be memory errors are reported, not performed.
    Vulnerable,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hardened => "hardened",
            Mode::Vulnerable => "vulnerable",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hardened" => Ok(Mode::Hardened),
            "vulnerable" => Ok(Mode::Vulnerable),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CrashClass {
    Npd,
    OobRead,
    OobWrite,
    HeapCorruption,
}

impl CrashClass {
    pub const ALL: [CrashClass; 4] = [
        CrashClass::Npd,
        CrashClass::OobRead,
        CrashClass::OobWrite,
        CrashClass::HeapCorruption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashClass::Npd => "NPD",
            CrashClass::OobRead => "OOB_Read",
            CrashClass::OobWrite => "OOB_Write",
            CrashClass::HeapCorruption => "Heap_Corruption",
        }
    }
}

impl fmt::Display for CrashClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrashClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown crash class `{s}`"))
    }
}

/// Places where vulnerable mode reports a simulated crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    /// Record-size shift in the superblock fill path.
    FillSuperShift,
    /// Attribute walk whose `off + asize` wrapped.
    EnumAttrOverflow,
    /// Root inode handed to the VFS without an operations table.
    RootIop,
    /// Attribute-list construction copying entries into a scratch buffer.
    AttrListCopy,
    /// Binary search over an index header whose `used` exceeds the buffer.
    HdrFindE,
    /// `$MFT` record interpreted through the directory half of the inode union.
    InodeUnion,
}

impl Site {
    pub const ALL: [Site; 6] = [
        Site::FillSuperShift,
        Site::EnumAttrOverflow,
        Site::RootIop,
        Site::AttrListCopy,
        Site::HdrFindE,
        Site::InodeUnion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::FillSuperShift => "fill_super_shift",
            Site::EnumAttrOverflow => "enum_attr_overflow",
            Site::RootIop => "root_iop",
            Site::AttrListCopy => "attr_list_copy",
            Site::HdrFindE => "hdr_find_e",
            Site::InodeUnion => "inode_union",
        }
    }

    /// The hardened-mode check that keeps execution away from this site.
    pub fn guard(self) -> Check {
        match self {
            Site::FillSuperShift => Check::RecordSizeRange,
            Site::EnumAttrOverflow => Check::EnumAttrOverflow,
            Site::RootIop => Check::RootLoad,
            Site::AttrListCopy => Check::AttrNameBounds,
            Site::HdrFindE => Check::IndexHdrUsed,
            Site::InodeUnion => Check::MftAsDir,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown site `{s}`"))
    }
}

macro_rules! checks {
    ($($variant:ident => $name:literal $(, $commit:literal)?;)*) => {
        /// Identifiers of every sanity check the reference target performs.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Check {
            $($variant,)*
        }

        impl Check {
            pub const ALL: &'static [Check] = &[$(Check::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Check::$variant => $name,)*
                }
            }

            /// Upstream commit whose patch introduced this check, if any.
            pub fn commit(self) -> Option<&'static str> {
                match self {
                    $(Check::$variant => checks!(@commit $($commit)?),)*
                }
            }
        }
    };
    (@commit $c:literal) => { Some($c) };
    (@commit) => { None };
}

checks! {
    BootLength => "boot_length";
    BootOem => "boot_oem";
    BootSignature => "boot_signature";
    BootSectorSize => "boot_sector_size";
    BootClusterSize => "boot_cluster_size";
    BootTotalSectors => "boot_total_sectors";
    RecordSizeRange => "record_size_range", "0b66046";
    RecordSizePow2 => "record_size_pow2";
    IndexSizeRange => "index_size_range";
    MftLocation => "mft_location";
    MftData => "mft_data";
    RecordMagic => "record_magic";
    RecordUsa => "record_usa";
    RecordHeader => "record_header";
    RecordRef => "record_ref";
    AttrHeaderBounds => "attr_header_bounds";
    AttrType => "attr_type";
    AttrSize => "attr_size";
    AttrBounds => "attr_bounds";
    EnumAttrOverflow => "enum_attr_overflow", "e19c627";
    AttrValueBounds => "attr_value_bounds";
    AttrRunBounds => "attr_run_bounds";
    AttrNameBounds => "attr_name_bounds", "54e4570";
    RunList => "run_list";
    RootLoad => "root_load", "c1ca8ef";
    RootNotDir => "root_not_dir";
    MftAsDir => "mft_as_dir", "467333a";
    InodeOps => "inode_ops";
    IndexRootHeader => "index_root_hdr";
    IndexAlloc => "index_alloc";
    IndexRecord => "index_record";
    IndexHdrUsed => "index_hdr_used", "4d42ecd";
    IndexHeader => "index_hdr";
    IndexEntry => "index_entry";
    IndexDepth => "index_depth";
    AttrListCapacity => "attr_list_capacity";
}

impl Check {
    /// The crash site this check guards, when it is one of the patched checks.
    pub fn guarded_site(self) -> Option<Site> {
        Site::ALL.into_iter().find(|s| s.guard() == self)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown check `{s}`"))
    }
}

/// Panics unless sites, guarding checks and commit tags pair up one-to-one.
pub fn assert_registry() {
    for site in Site::ALL {
        let guard = site.guard();
        assert_eq!(guard.guarded_site(), Some(site), "{site} guard is shared");
        assert!(
            guard.commit().is_some(),
            "{guard} guards {site} without a commit tag"
        );
    }
    for &check in Check::ALL {
        assert_eq!(
            check.commit().is_some(),
            check.guarded_site().is_some(),
            "{check}: commit tag and guarded site disagree"
        );
    }
}

/// Why a target code path stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stop {
    /// A sanity check rejected the input.
    Check { check: Check, detail: String },
    /// Vulnerable mode reached an emulated bug site.
    Crash {
        class: CrashClass,
        site: Site,
        detail: String,
    },
    /// The bounds-tracking reader refused a read. Always a harness bug.
    Fault(BoundsFault),
}

impl Stop {
    pub fn check(check: Check, detail: impl Into<String>) -> Self {
        Stop::Check {
            check,
            detail: detail.into(),
        }
    }

    pub fn crash(class: CrashClass, site: Site, detail: impl Into<String>) -> Self {
        Stop::Crash {
            class,
            site,
            detail: detail.into(),
        }
    }
}

impl From<BoundsFault> for Stop {
    fn from(f: BoundsFault) -> Self {
        Stop::Fault(f)
    }
}

impl fmt::Display for Stop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stop::Check { check, detail } => write!(f, "check {check}: {detail}"),
            Stop::Crash {
                class,
                site,
                detail,
            } => write!(f, "{class} at {site}: {detail}"),
            Stop::Fault(fault) => write!(f, "harness bounds violation: {fault}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_bijective() {
        assert_registry();
    }

    #[test]
    fn names_round_trip() {
        for &c in Check::ALL {
            assert_eq!(c.as_str().parse::<Check>().unwrap(), c);
        }
        for s in Site::ALL {
            assert_eq!(s.as_str().parse::<Site>().unwrap(), s);
        }
        for c in CrashClass::ALL {
            assert_eq!(c.as_str().parse::<CrashClass>().unwrap(), c);
        }
    }

    #[test]
    fn five_listed_commits_are_tagged() {
        let tagged: Vec<_> = Check::ALL.iter().filter_map(|c| c.commit()).collect();
        for commit in ["0b66046", "e19c627", "c1ca8ef", "54e4570", "4d42ecd"] {
            assert!(tagged.contains(&commit), "{commit} missing");
        }
    }
}
