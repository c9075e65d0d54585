//! Resident attribute values the target interprets: `$FILE_NAME`,
//! `$INDEX_ROOT` preamble, `$EA` entries and symlink reparse data.

use crate::reader::{get_u16, get_u32, get_u64, put_u16, put_u32, put_u64};

/// Set in `FileNameValue::flags` for directories.
pub const FILE_NAME_DIRECTORY: u32 = 0x1000_0000;
pub const NAMESPACE_POSIX: u8 = 0;
/// Name of the directory index.
pub const I30: &str = "$I30";
/// `IO_REPARSE_TAG_SYMLINK`.
pub const REPARSE_TAG_SYMLINK: u32 = 0xA000_000C;
const FILE_NAME_FIXED: usize = 0x42;

pub fn mft_ref(record: u64, seq: u16) -> u64 {
    (record & 0x0000_FFFF_FFFF_FFFF) | ((seq as u64) << 48)
}

pub fn ref_record(file_ref: u64) -> u64 {
    file_ref & 0x0000_FFFF_FFFF_FFFF
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileNameValue {
    pub parent_ref: u64,
    pub alloc_size: u64,
    pub data_size: u64,
    pub flags: u32,
    pub namespace: u8,
    pub name: String,
}

impl FileNameValue {
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < FILE_NAME_FIXED {
            return None;
        }
        let name_len = bytes[0x40] as usize;
        let name_bytes = bytes.get(FILE_NAME_FIXED..FILE_NAME_FIXED + 2 * name_len)?;
        let units: Vec<u16> = name_bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Some(Self {
            parent_ref: get_u64(bytes, 0),
            alloc_size: get_u64(bytes, 0x28),
            data_size: get_u64(bytes, 0x30),
            flags: get_u32(bytes, 0x38),
            namespace: bytes[0x41],
            name: String::from_utf16_lossy(&units),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let units: Vec<u16> = self.name.encode_utf16().collect();
        let mut out = vec![0u8; FILE_NAME_FIXED + 2 * units.len()];
        put_u64(&mut out, 0, self.parent_ref);
        put_u64(&mut out, 0x28, self.alloc_size);
        put_u64(&mut out, 0x30, self.data_size);
        put_u32(&mut out, 0x38, self.flags);
        out[0x40] = units.len() as u8;
        out[0x41] = self.namespace;
        for (i, u) in units.iter().enumerate() {
            put_u16(&mut out, FILE_NAME_FIXED + 2 * i, *u);
        }
        out
    }
}

/// Fixed preamble of an `$INDEX_ROOT` value, before its index header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRootPreamble {
    pub indexed_type: u32,
    pub collation: u32,
    pub index_block_size: u32,
    pub clusters_per_block: u8,
}

impl IndexRootPreamble {
    pub const LEN: usize = 0x10;

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        (bytes.len() >= Self::LEN).then(|| Self {
            indexed_type: get_u32(bytes, 0),
            collation: get_u32(bytes, 4),
            index_block_size: get_u32(bytes, 8),
            clusters_per_block: bytes[12],
        })
    }

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        put_u32(&mut out, 0, self.indexed_type);
        put_u32(&mut out, 4, self.collation);
        put_u32(&mut out, 8, self.index_block_size);
        out[12] = self.clusters_per_block;
        out
    }
}

/// Reparse-point value for a symlink: tag, target length, UTF-16LE target.
pub fn symlink_value(target: &str) -> Vec<u8> {
    let units: Vec<u16> = target.encode_utf16().collect();
    let mut v = vec![0u8; 8 + 2 * units.len()];
    put_u32(&mut v, 0, REPARSE_TAG_SYMLINK);
    put_u16(&mut v, 4, (2 * units.len()) as u16);
    for (i, u) in units.iter().enumerate() {
        put_u16(&mut v, 8 + 2 * i, *u);
    }
    v
}

pub fn symlink_target(value: &[u8]) -> Option<String> {
    if value.len() < 8 || get_u32(value, 0) != REPARSE_TAG_SYMLINK {
        return None;
    }
    let len = get_u16(value, 4) as usize;
    let units: Vec<u16> = value
        .get(8..8 + len)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Some(String::from_utf16_lossy(&units))
}

/// One `FILE_FULL_EA_INFORMATION` entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EaEntry {
    pub flags: u8,
    pub name: String,
    pub value: Vec<u8>,
}

impl EaEntry {
    pub fn encoded_len(name_len: usize, value_len: usize) -> usize {
        (8 + name_len + 1 + value_len).next_multiple_of(4)
    }
}

pub fn encode_eas(entries: &[EaEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        let len = EaEntry::encoded_len(e.name.len(), e.value.len());
        let start = out.len();
        out.resize(start + len, 0);
        put_u32(&mut out, start, len as u32);
        out[start + 4] = e.flags;
        out[start + 5] = e.name.len() as u8;
        put_u16(&mut out, start + 6, e.value.len() as u16);
        out[start + 8..start + 8 + e.name.len()].copy_from_slice(e.name.as_bytes());
        let v = start + 8 + e.name.len() + 1;
        out[v..v + e.value.len()].copy_from_slice(&e.value);
    }
    out
}

/// Decodes a packed EA list; `None` if any entry is malformed.
pub fn decode_eas(bytes: &[u8]) -> Option<Vec<EaEntry>> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let header = bytes.get(pos..pos + 8)?;
        let next = get_u32(header, 0) as usize;
        let name_len = header[5] as usize;
        let value_len = u16::from_le_bytes([header[6], header[7]]) as usize;
        if next < EaEntry::encoded_len(name_len, value_len) {
            return None;
        }
        let name = bytes.get(pos + 8..pos + 8 + name_len)?;
        let v = pos + 8 + name_len + 1;
        let value = bytes.get(v..v + value_len)?;
        out.push(EaEntry {
            flags: header[4],
            name: String::from_utf8_lossy(name).into_owned(),
            value: value.to_vec(),
        });
        pos = pos.checked_add(next)?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_name_round_trip() {
        let v = FileNameValue {
            parent_ref: mft_ref(5, 5),
            alloc_size: 4096,
            data_size: 12,
            flags: FILE_NAME_DIRECTORY,
            namespace: NAMESPACE_POSIX,
            name: "dir-ü".into(),
        };
        let bytes = v.encode();
        assert_eq!(bytes.len(), 0x42 + 10);
        assert_eq!(FileNameValue::decode(&bytes).unwrap(), v);
        assert!(FileNameValue::decode(&bytes[..0x45]).is_none());
    }

    #[test]
    fn ea_round_trip() {
        let eas = vec![
            EaEntry {
                flags: 0,
                name: "user.a".into(),
                value: vec![1, 2, 3],
            },
            EaEntry {
                flags: 0,
                name: "user.bb".into(),
                value: vec![],
            },
        ];
        let bytes = encode_eas(&eas);
        assert_eq!(bytes.len() % 4, 0);
        assert_eq!(decode_eas(&bytes).unwrap(), eas);
        assert!(decode_eas(&bytes[..10]).is_none());
    }

    #[test]
    fn reference_packing() {
        let r = mft_ref(0x1234, 7);
        assert_eq!(ref_record(r), 0x1234);
        assert_eq!(r >> 48, 7);
    }
}
