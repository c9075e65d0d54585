//! NTFS on-disk structures: boot sector, MFT file records, attributes, index
//! buffers, run lists and update sequence arrays.
//!
//! Decoders are structural: they fail only when bytes cannot be interpreted
//! at all (wrong length, wrong magic, torn sectors). Semantic validation is
//! left to [`crate::target`]. All integers are little-endian.

mod boot;
pub mod index;
mod record;
pub mod runs;
pub mod usa;
mod values;

use thiserror::Error;

pub use boot::{
    blksize_bits, encode_size_raw, record_size_bytes, PartitionBootSector, BOOT_SIGNATURE,
    OEM_NTFS, OFF_INDEX_SIZE, OFF_RECORD_SIZE,
};
pub use index::{
    collation_key, IndexBuffer, IndexEntry, IndexHeader, INDEX_MAGIC, INDX_HDR_OFFSET,
    INDX_USA_OFFSET,
};
pub use record::{
    enum_attributes, walk_attributes, AttrBody, AttrType, Attribute, FileRecord, ATTR_END,
    FLAG_DIRECTORY, FLAG_IN_USE, NONRESIDENT_HEADER, OFF_ATTRS_OFFSET, OFF_BYTES_USED, OFF_FLAGS,
    RECORD_MAGIC, RECORD_USA_OFFSET, RESIDENT_HEADER,
};
pub use runs::{decode_runs, encode_runs, map_extent, Run, RunError};
pub use usa::{UsaError, FIXUP_STRIDE};
pub use values::{
    decode_eas, encode_eas, mft_ref, ref_record, symlink_target, symlink_value, EaEntry,
    FileNameValue, IndexRootPreamble, FILE_NAME_DIRECTORY, I30, NAMESPACE_POSIX,
    REPARSE_TAG_SYMLINK,
};

/// Boot sector length as decoded here.
pub const SECTOR_SIZE: usize = 512;

/// Default upper bound on the MFT record size; `PAPORA_MAX_MFT_BYTES`
/// overrides it at the CLI.
pub const MAX_BYTES_PER_MFT: u32 = 4096;

pub const MFT_REC_MFT: u64 = 0;
pub const MFT_REC_MIRR: u64 = 1;
pub const MFT_REC_ROOT: u64 = 5;
/// First record number available to ordinary files.
pub const MFT_REC_FREE: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("boot sector must be {SECTOR_SIZE} bytes, got {0}")]
    BootLength(usize),
    #[error("expected {expected} bytes, got {found}")]
    Length { expected: usize, found: usize },
    #[error("bad magic {0:?}")]
    NotARecord([u8; 4]),
    #[error("torn or malformed update sequence: {0}")]
    Usa(#[from] UsaError),
}

/// Decodes sector 0 of an image.
pub fn decode_boot(sector: &[u8]) -> Result<PartitionBootSector, DecodeError> {
    PartitionBootSector::decode(sector)
}

pub fn decode_file_record(
    bytes: &[u8],
    record_size: usize,
    verify_usa: bool,
) -> Result<FileRecord, DecodeError> {
    FileRecord::decode(bytes, record_size, verify_usa)
}
