use super::usa;
use super::DecodeError;
use crate::checks::{Check, Stop};
use crate::reader::{get_u16, get_u64, put_u16, put_u32, put_u64, ByteReader};

pub const INDEX_MAGIC: [u8; 4] = *b"INDX";
/// `offsetof(INDEX_BUFFER, ihdr)`.
pub const INDX_HDR_OFFSET: usize = 0x18;
pub const INDX_USA_OFFSET: u16 = 0x28;
pub(crate) const OFF_LSN: usize = 0x08;
pub(crate) const OFF_VBN: usize = 0x10;

pub const HDR_FLAG_HAS_SUBNODES: u8 = 0x01;

pub const ENTRY_HAS_SUBNODE: u16 = 0x0001;
pub const ENTRY_LAST: u16 = 0x0002;
pub const ENTRY_HEADER: u32 = 0x10;

/// `INDEX_HDR`: offsets are relative to the header itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexHeader {
    pub entries_off: u32,
    pub used: u32,
    pub total: u32,
    pub flags: u8,
}

impl IndexHeader {
    pub const LEN: u32 = 0x10;

    pub fn read(reader: &ByteReader<'_>, base: u64) -> Result<Self, Stop> {
        Ok(Self {
            entries_off: reader.u32(base)?,
            used: reader.u32(base + 4)?,
            total: reader.u32(base + 8)?,
            flags: reader.u8(base + 12)?,
        })
    }

    pub fn write(&self, buf: &mut [u8], base: usize) {
        put_u32(buf, base, self.entries_off);
        put_u32(buf, base + 4, self.used);
        put_u32(buf, base + 8, self.total);
        buf[base + 12] = self.flags;
    }

    pub fn has_subnodes(&self) -> bool {
        self.flags & HDR_FLAG_HAS_SUBNODES != 0
    }
}

/// One `INDX` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBuffer {
    pub magic: [u8; 4],
    pub usa_offset: u16,
    pub usa_count: u16,
    pub lsn: u64,
    pub vbn: u64,
    pub hdr: IndexHeader,
    pub raw: Vec<u8>,
    pub usa_restored: bool,
}

impl IndexBuffer {
    pub fn decode(bytes: &[u8], verify_usa: bool) -> Result<Self, DecodeError> {
        if bytes.len() < INDX_HDR_OFFSET + IndexHeader::LEN as usize {
            return Err(DecodeError::Length {
                expected: INDX_HDR_OFFSET + IndexHeader::LEN as usize,
                found: bytes.len(),
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != INDEX_MAGIC {
            return Err(DecodeError::NotARecord(magic));
        }
        let mut raw = bytes.to_vec();
        if verify_usa {
            usa::restore(&mut raw)?;
        }
        let reader = ByteReader::new(&raw);
        let hdr = IndexHeader::read(&reader, INDX_HDR_OFFSET as u64).expect("length checked above");
        Ok(Self {
            magic,
            usa_offset: get_u16(&raw, usa::OFF_USA_OFFSET),
            usa_count: get_u16(&raw, usa::OFF_USA_COUNT),
            lsn: get_u64(&raw, OFF_LSN),
            vbn: get_u64(&raw, OFF_VBN),
            hdr,
            raw,
            usa_restored: verify_usa,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut raw = self.raw.clone();
        raw[..4].copy_from_slice(&self.magic);
        put_u16(&mut raw, usa::OFF_USA_OFFSET, self.usa_offset);
        put_u16(&mut raw, usa::OFF_USA_COUNT, self.usa_count);
        put_u64(&mut raw, OFF_LSN, self.lsn);
        put_u64(&mut raw, OFF_VBN, self.vbn);
        self.hdr.write(&mut raw, INDX_HDR_OFFSET);
        if self.usa_restored {
            if let Ok((off, _)) = usa::geometry(&raw) {
                let usn = get_u16(&raw, off);
                usa::protect(&mut raw, usn).expect("geometry checked above");
            }
        }
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    /// Absolute offset of the entry within the buffer it was read from.
    pub offset: u32,
    pub file_ref: u64,
    pub length: u16,
    pub key_len: u16,
    pub flags: u16,
    /// Name from the entry's `FILE_NAME` key; `None` for the terminator.
    pub name: Option<String>,
    pub subnode_vcn: Option<u64>,
}

impl IndexEntry {
    pub fn is_last(&self) -> bool {
        self.flags & ENTRY_LAST != 0
    }
}

/// Reads every entry of the header at `hdr_base`, up to its terminator.
/// The reader's limit bounds how far the walk may go.
pub fn collect_entries(
    reader: &ByteReader<'_>,
    hdr_base: u64,
    hdr: &IndexHeader,
) -> Result<Vec<IndexEntry>, Stop> {
    let start = hdr_base + hdr.entries_off as u64;
    let end = hdr_base + hdr.used as u64;
    if hdr.entries_off < IndexHeader::LEN || start + ENTRY_HEADER as u64 > end {
        return Err(Stop::check(
            Check::IndexHeader,
            format!(
                "entries_off {:#x} / used {:#x} leave no room for an entry",
                hdr.entries_off, hdr.used
            ),
        ));
    }
    let mut entries = Vec::new();
    let mut off = start;
    loop {
        if off + ENTRY_HEADER as u64 > end {
            return Err(Stop::check(
                Check::IndexEntry,
                format!("entry at {off:#x} crosses index end {end:#x}"),
            ));
        }
        let file_ref = reader.u64(off)?;
        let length = reader.u16(off + 8)?;
        let key_len = reader.u16(off + 10)?;
        let flags = reader.u16(off + 12)?;
        let subnode = flags & ENTRY_HAS_SUBNODE != 0;
        let min_len = ENTRY_HEADER as u64 + key_len as u64 + if subnode { 8 } else { 0 };
        if (length as u64) < min_len || length % 8 != 0 || off + length as u64 > end {
            return Err(Stop::check(
                Check::IndexEntry,
                format!("entry at {off:#x} has length {length:#x} (key {key_len:#x})"),
            ));
        }
        let subnode_vcn = if subnode {
            Some(reader.u64(off + length as u64 - 8)?)
        } else {
            None
        };
        let last = flags & ENTRY_LAST != 0;
        let name = if last {
            None
        } else {
            let key = reader.bytes(off + ENTRY_HEADER as u64, key_len as u64)?;
            Some(file_name_key(key).ok_or_else(|| {
                Stop::check(
                    Check::IndexEntry,
                    format!("entry at {off:#x} has a malformed key"),
                )
            })?)
        };
        entries.push(IndexEntry {
            offset: off as u32,
            file_ref,
            length,
            key_len,
            flags,
            name,
            subnode_vcn,
        });
        if last {
            return Ok(entries);
        }
        off += length as u64;
    }
}

fn file_name_key(key: &[u8]) -> Option<String> {
    let value = super::FileNameValue::decode(key)?;
    Some(value.name)
}

/// Serializes one index entry.
pub fn encode_entry(file_ref: u64, key: &[u8], flags: u16, subnode_vcn: Option<u64>) -> Vec<u8> {
    let mut flags = flags;
    let mut len = ENTRY_HEADER as usize + key.len();
    if subnode_vcn.is_some() {
        flags |= ENTRY_HAS_SUBNODE;
        len += 8;
    }
    let len = len.next_multiple_of(8);
    let mut out = vec![0u8; len];
    put_u64(&mut out, 0, file_ref);
    put_u16(&mut out, 8, len as u16);
    put_u16(&mut out, 10, key.len() as u16);
    put_u16(&mut out, 12, flags);
    out[ENTRY_HEADER as usize..ENTRY_HEADER as usize + key.len()].copy_from_slice(key);
    if let Some(vcn) = subnode_vcn {
        put_u64(&mut out, len - 8, vcn);
    }
    out
}

/// Collation key: UTF-16 units with ASCII letters upcased. Full `$UpCase`
/// collation is out of scope; forged names are ASCII.
pub fn collation_key(name: &str) -> Vec<u16> {
    name.encode_utf16()
        .map(|u| {
            if (b'a' as u16..=b'z' as u16).contains(&u) {
                u - 0x20
            } else {
                u
            }
        })
        .collect()
}
