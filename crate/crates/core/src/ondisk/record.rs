use super::usa;
use super::DecodeError;
use crate::checks::{Check, CrashClass, Mode, Site, Stop};
use crate::reader::{get_u16, get_u32, get_u64, put_u16, put_u32, put_u64, ByteReader};

pub const RECORD_MAGIC: [u8; 4] = *b"FILE";

pub const FLAG_IN_USE: u16 = 0x0001;
pub const FLAG_DIRECTORY: u16 = 0x0002;

pub(crate) const OFF_LSN: usize = 0x08;
pub(crate) const OFF_SEQUENCE: usize = 0x10;
pub(crate) const OFF_HARD_LINKS: usize = 0x12;
pub const OFF_ATTRS_OFFSET: usize = 0x14;
pub const OFF_FLAGS: usize = 0x16;
pub const OFF_BYTES_USED: usize = 0x18;
pub(crate) const OFF_BYTES_ALLOCATED: usize = 0x1C;
pub(crate) const OFF_BASE_REF: usize = 0x20;
pub(crate) const OFF_NEXT_ATTR_ID: usize = 0x28;
pub(crate) const OFF_RECORD_NUMBER: usize = 0x2C;
/// Where formatters put the update sequence array in a file record.
pub const RECORD_USA_OFFSET: u16 = 0x30;

pub const ATTR_END: u32 = 0xFFFF_FFFF;
/// Resident attribute header length.
pub const RESIDENT_HEADER: u32 = 0x18;
/// Non-resident attribute header length (uncompressed form).
pub const NONRESIDENT_HEADER: u32 = 0x40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrType(pub u32);

impl AttrType {
    pub const STANDARD_INFORMATION: AttrType = AttrType(0x10);
    pub const ATTRIBUTE_LIST: AttrType = AttrType(0x20);
    pub const FILE_NAME: AttrType = AttrType(0x30);
    pub const OBJECT_ID: AttrType = AttrType(0x40);
    pub const SECURITY_DESCRIPTOR: AttrType = AttrType(0x50);
    pub const VOLUME_NAME: AttrType = AttrType(0x60);
    pub const VOLUME_INFORMATION: AttrType = AttrType(0x70);
    pub const DATA: AttrType = AttrType(0x80);
    pub const INDEX_ROOT: AttrType = AttrType(0x90);
    pub const INDEX_ALLOCATION: AttrType = AttrType(0xA0);
    pub const BITMAP: AttrType = AttrType(0xB0);
    pub const REPARSE_POINT: AttrType = AttrType(0xC0);
    pub const EA_INFORMATION: AttrType = AttrType(0xD0);
    pub const EA: AttrType = AttrType(0xE0);
    pub const LOGGED_UTILITY_STREAM: AttrType = AttrType(0x100);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrBody {
    Resident {
        value_size: u32,
        value_off: u16,
        res_flags: u8,
    },
    NonResident {
        svcn: u64,
        evcn: u64,
        run_off: u16,
        compression_unit: u16,
        alloc_size: u64,
        data_size: u64,
        valid_size: u64,
    },
}

/// One attribute header as found in a file record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    /// Byte offset of the attribute within its record.
    pub offset: u32,
    pub attr_type: AttrType,
    pub size: u32,
    pub non_res: u8,
    /// Count of UTF-16 units.
    pub name_len: u8,
    pub name_off: u16,
    pub flags: u16,
    pub id: u16,
    pub body: AttrBody,
}

impl Attribute {
    /// Offset (relative to the attribute) where the value or run list starts.
    pub fn payload_offset(&self) -> u32 {
        match self.body {
            AttrBody::Resident { value_off, .. } => value_off as u32,
            AttrBody::NonResident { run_off, .. } => run_off as u32,
        }
    }

    pub fn is_resident(&self) -> bool {
        matches!(self.body, AttrBody::Resident { .. })
    }

    fn span(&self, rel: u64, len: u64, raw_len: usize) -> Option<std::ops::Range<usize>> {
        let start = (self.offset as u64).checked_add(rel)?;
        let end = start.checked_add(len)?;
        (end <= raw_len as u64).then_some(start as usize..end as usize)
    }

    /// Raw UTF-16LE name bytes, if they lie inside `raw`.
    pub fn name_bytes<'a>(&self, raw: &'a [u8]) -> Option<&'a [u8]> {
        let range = self.span(self.name_off as u64, 2 * self.name_len as u64, raw.len())?;
        Some(&raw[range])
    }

    pub fn name(&self, raw: &[u8]) -> Option<String> {
        let bytes = self.name_bytes(raw)?;
        let units: Vec<u16> = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Some(String::from_utf16_lossy(&units))
    }

    /// Resident value bytes.
    pub fn value<'a>(&self, raw: &'a [u8]) -> Option<&'a [u8]> {
        match self.body {
            AttrBody::Resident {
                value_size,
                value_off,
                ..
            } => {
                let range = self.span(value_off as u64, value_size as u64, raw.len())?;
                Some(&raw[range])
            }
            AttrBody::NonResident { .. } => None,
        }
    }

    /// Non-resident run list bytes (up to the attribute's end).
    pub fn run_bytes<'a>(&self, raw: &'a [u8]) -> Option<&'a [u8]> {
        match self.body {
            AttrBody::NonResident { run_off, .. } => {
                let len = (self.size as u64).checked_sub(run_off as u64)?;
                let range = self.span(run_off as u64, len, raw.len())?;
                Some(&raw[range])
            }
            AttrBody::Resident { .. } => None,
        }
    }

    fn write_header(&self, raw: &mut [u8]) {
        let base = self.offset as usize;
        put_u32(raw, base, self.attr_type.0);
        put_u32(raw, base + 0x04, self.size);
        raw[base + 0x08] = self.non_res;
        raw[base + 0x09] = self.name_len;
        put_u16(raw, base + 0x0A, self.name_off);
        put_u16(raw, base + 0x0C, self.flags);
        put_u16(raw, base + 0x0E, self.id);
        match self.body {
            AttrBody::Resident {
                value_size,
                value_off,
                res_flags,
            } => {
                put_u32(raw, base + 0x10, value_size);
                put_u16(raw, base + 0x14, value_off);
                raw[base + 0x16] = res_flags;
            }
            AttrBody::NonResident {
                svcn,
                evcn,
                run_off,
                compression_unit,
                alloc_size,
                data_size,
                valid_size,
            } => {
                put_u64(raw, base + 0x10, svcn);
                put_u64(raw, base + 0x18, evcn);
                put_u16(raw, base + 0x20, run_off);
                put_u16(raw, base + 0x22, compression_unit);
                put_u64(raw, base + 0x28, alloc_size);
                put_u64(raw, base + 0x30, data_size);
                put_u64(raw, base + 0x38, valid_size);
            }
        }
    }
}

/// One MFT entry. `raw` holds the record bytes, with sector tails restored
/// when `usa_restored` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub magic: [u8; 4],
    pub usa_offset: u16,
    pub usa_count: u16,
    pub lsn: u64,
    pub sequence: u16,
    pub hard_links: u16,
    pub attrs_offset: u16,
    pub flags: u16,
    pub bytes_used: u32,
    pub bytes_allocated: u32,
    pub base_ref: u64,
    pub next_attr_id: u16,
    pub record_number: u32,
    /// Attributes accepted by a hardened walk; a chain that fails the walk
    /// leaves only the prefix before the failure.
    pub attributes: Vec<Attribute>,
    pub raw: Vec<u8>,
    pub usa_restored: bool,
}

impl FileRecord {
    /// Decodes one record. With `verify_usa`, every sector tail must carry
    /// the usn and is restored before attributes are parsed.
    pub fn decode(bytes: &[u8], record_size: usize, verify_usa: bool) -> Result<Self, DecodeError> {
        let mut rec = Self::decode_header(bytes, record_size, verify_usa)?;
        let reader = ByteReader::with_limit(&rec.raw, rec.bytes_used as usize);
        let mut attrs = Vec::new();
        // a failed walk keeps the prefix it accepted
        let _ = walk_into(
            &reader,
            rec.attrs_offset as u32,
            rec.bytes_used,
            Mode::Hardened,
            &mut attrs,
        );
        rec.attributes = attrs;
        Ok(rec)
    }

    /// Like [`FileRecord::decode`] but leaves `attributes` empty.
    pub fn decode_header(
        bytes: &[u8],
        record_size: usize,
        verify_usa: bool,
    ) -> Result<Self, DecodeError> {
        if bytes.len() != record_size || record_size < OFF_RECORD_NUMBER + 4 {
            return Err(DecodeError::Length {
                expected: record_size,
                found: bytes.len(),
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != RECORD_MAGIC {
            return Err(DecodeError::NotARecord(magic));
        }
        let mut raw = bytes.to_vec();
        if verify_usa {
            usa::restore(&mut raw)?;
        }
        Ok(Self {
            magic,
            usa_offset: get_u16(&raw, usa::OFF_USA_OFFSET),
            usa_count: get_u16(&raw, usa::OFF_USA_COUNT),
            lsn: get_u64(&raw, OFF_LSN),
            sequence: get_u16(&raw, OFF_SEQUENCE),
            hard_links: get_u16(&raw, OFF_HARD_LINKS),
            attrs_offset: get_u16(&raw, OFF_ATTRS_OFFSET),
            flags: get_u16(&raw, OFF_FLAGS),
            bytes_used: get_u32(&raw, OFF_BYTES_USED),
            bytes_allocated: get_u32(&raw, OFF_BYTES_ALLOCATED),
            base_ref: get_u64(&raw, OFF_BASE_REF),
            next_attr_id: get_u16(&raw, OFF_NEXT_ATTR_ID),
            record_number: get_u32(&raw, OFF_RECORD_NUMBER),
            attributes: Vec::new(),
            raw,
            usa_restored: verify_usa,
        })
    }

    /// Writes header and attribute header fields back over `raw` and, when the
    /// record was decoded with fixups restored, re-applies them.
    pub fn encode(&self) -> Vec<u8> {
        let mut raw = self.raw.clone();
        raw[..4].copy_from_slice(&self.magic);
        put_u16(&mut raw, usa::OFF_USA_OFFSET, self.usa_offset);
        put_u16(&mut raw, usa::OFF_USA_COUNT, self.usa_count);
        put_u64(&mut raw, OFF_LSN, self.lsn);
        put_u16(&mut raw, OFF_SEQUENCE, self.sequence);
        put_u16(&mut raw, OFF_HARD_LINKS, self.hard_links);
        put_u16(&mut raw, OFF_ATTRS_OFFSET, self.attrs_offset);
        put_u16(&mut raw, OFF_FLAGS, self.flags);
        put_u32(&mut raw, OFF_BYTES_USED, self.bytes_used);
        put_u32(&mut raw, OFF_BYTES_ALLOCATED, self.bytes_allocated);
        put_u64(&mut raw, OFF_BASE_REF, self.base_ref);
        put_u16(&mut raw, OFF_NEXT_ATTR_ID, self.next_attr_id);
        put_u32(&mut raw, OFF_RECORD_NUMBER, self.record_number);
        for attr in &self.attributes {
            attr.write_header(&mut raw);
        }
        if self.usa_restored {
            if let Ok((off, _)) = usa::geometry(&raw) {
                let usn = get_u16(&raw, off);
                usa::protect(&mut raw, usn).expect("geometry checked above");
            }
        }
        raw
    }

    pub fn in_use(&self) -> bool {
        self.flags & FLAG_IN_USE != 0
    }

    pub fn is_directory(&self) -> bool {
        self.flags & FLAG_DIRECTORY != 0
    }

    /// Header consistency the kernel checks before walking attributes.
    pub fn check_header(&self) -> Result<(), Stop> {
        let fail = |detail: String| Err(Stop::check(Check::RecordHeader, detail));
        if self.bytes_allocated as usize != self.raw.len() {
            return fail(format!(
                "bytes_allocated {} != record size {}",
                self.bytes_allocated,
                self.raw.len()
            ));
        }
        if self.bytes_used > self.bytes_allocated {
            return fail(format!(
                "bytes_used {} exceeds bytes_allocated {}",
                self.bytes_used, self.bytes_allocated
            ));
        }
        let usa_end = self.usa_offset as u32 + 2 * self.usa_count as u32;
        if !self.attrs_offset.is_multiple_of(8)
            || (self.attrs_offset as u32) < usa_end
            || self.attrs_offset as u32 >= self.bytes_used
        {
            return fail(format!(
                "attrs_offset {:#x} outside [{usa_end:#x}, {:#x})",
                self.attrs_offset, self.bytes_used
            ));
        }
        Ok(())
    }

    pub fn find(&self, attr_type: AttrType) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.attr_type == attr_type)
    }
}

/// Walks the attribute chain of `rec`, reading no byte at or past
/// `bytes_used`.
pub fn enum_attributes(rec: &FileRecord, mode: Mode) -> Result<Vec<Attribute>, Stop> {
    let reader = ByteReader::with_limit(&rec.raw, rec.bytes_used as usize);
    walk_attributes(&reader, rec.attrs_offset as u32, rec.bytes_used, mode)
}

/// The attribute walk proper, over a caller-supplied reader.
///
/// Both modes check the span against `used` with 32-bit wrapping arithmetic.
/// Hardened mode adds the overflow guard and the name bound; vulnerable mode
/// instead reports an out-of-bounds read when the wrapped sum slipped past the
/// span check.
pub fn walk_attributes(
    reader: &ByteReader<'_>,
    attrs_offset: u32,
    used: u32,
    mode: Mode,
) -> Result<Vec<Attribute>, Stop> {
    let mut attrs = Vec::new();
    walk_into(reader, attrs_offset, used, mode, &mut attrs)?;
    Ok(attrs)
}

fn walk_into(
    reader: &ByteReader<'_>,
    attrs_offset: u32,
    used: u32,
    mode: Mode,
    attrs: &mut Vec<Attribute>,
) -> Result<(), Stop> {
    let used = used.min(reader.limit() as u32);
    let mut off = attrs_offset;
    loop {
        if off as u64 + 8 > used as u64 {
            return Err(Stop::check(
                Check::AttrHeaderBounds,
                format!("attribute header at {off:#x} crosses used {used:#x}"),
            ));
        }
        let attr_type = reader.u32(off as u64)?;
        if attr_type == ATTR_END {
            return Ok(());
        }
        if attr_type & 0xF != 0 || attr_type > AttrType::LOGGED_UTILITY_STREAM.0 {
            return Err(Stop::check(
                Check::AttrType,
                format!("unknown attribute type {attr_type:#x} at {off:#x}"),
            ));
        }
        let asize = reader.u32(off as u64 + 4)?;
        if asize < RESIDENT_HEADER {
            return Err(Stop::check(
                Check::AttrSize,
                format!("attribute size {asize:#x} below resident header"),
            ));
        }
        let end = off.wrapping_add(asize);
        if end > used {
            return Err(Stop::check(
                Check::AttrBounds,
                format!("off {off:#x} + asize {asize:#x} > used {used:#x}"),
            ));
        }
        match mode {
            Mode::Hardened => {
                if end < off {
                    return Err(Stop::check(
                        Check::EnumAttrOverflow,
                        format!("off {off:#x} + asize {asize:#x} wraps"),
                    ));
                }
            }
            Mode::Vulnerable => {
                if off as u64 + asize as u64 > used as u64 {
                    return Err(Stop::crash(
                        CrashClass::OobRead,
                        Site::EnumAttrOverflow,
                        format!(
                            "off {off:#x} + asize {asize:#x} wrapped to {end:#x}; next attribute read {:#x} past used",
                            off as u64 + asize as u64 - used as u64
                        ),
                    ));
                }
            }
        }
        if asize % 8 != 0 {
            return Err(Stop::check(
                Check::AttrSize,
                format!("attribute size {asize:#x} not 8-aligned"),
            ));
        }
        let attr = read_attribute(reader, off, asize)?;
        if let Mode::Hardened = mode {
            let name_end = attr.name_off as u32 + 2 * attr.name_len as u32;
            if attr.name_len != 0 && name_end > attr.payload_offset() {
                return Err(Stop::check(
                    Check::AttrNameBounds,
                    format!(
                        "name_off {:#x} + 2*name_len {} overlaps payload at {:#x}",
                        attr.name_off,
                        attr.name_len,
                        attr.payload_offset()
                    ),
                ));
            }
        }
        attrs.push(attr);
        off = end;
    }
}

/// Reads the header of the attribute spanning `[off, off + asize)` and
/// checks its payload placement. The span is already known to lie within
/// the reader's limit.
fn read_attribute(reader: &ByteReader<'_>, off: u32, asize: u32) -> Result<Attribute, Stop> {
    let base = off as u64;
    let non_res = reader.u8(base + 0x08)?;
    let body = if non_res == 0 {
        let value_size = reader.u32(base + 0x10)?;
        let value_off = reader.u16(base + 0x14)?;
        if value_off as u64 + value_size as u64 > asize as u64 {
            return Err(Stop::check(
                Check::AttrValueBounds,
                format!("value {value_off:#x}+{value_size:#x} exceeds attribute size {asize:#x}"),
            ));
        }
        AttrBody::Resident {
            value_size,
            value_off,
            res_flags: reader.u8(base + 0x16)?,
        }
    } else {
        if asize < NONRESIDENT_HEADER {
            return Err(Stop::check(
                Check::AttrSize,
                format!("non-resident attribute size {asize:#x} below header"),
            ));
        }
        let run_off = reader.u16(base + 0x20)?;
        if run_off as u32 > asize || (run_off as u32) < NONRESIDENT_HEADER {
            return Err(Stop::check(
                Check::AttrRunBounds,
                format!("run list offset {run_off:#x} outside attribute of {asize:#x}"),
            ));
        }
        AttrBody::NonResident {
            svcn: reader.u64(base + 0x10)?,
            evcn: reader.u64(base + 0x18)?,
            run_off,
            compression_unit: reader.u16(base + 0x22)?,
            alloc_size: reader.u64(base + 0x28)?,
            data_size: reader.u64(base + 0x30)?,
            valid_size: reader.u64(base + 0x38)?,
        }
    };
    Ok(Attribute {
        offset: off,
        attr_type: AttrType(reader.u32(base)?),
        size: asize,
        non_res,
        name_len: reader.u8(base + 0x09)?,
        name_off: reader.u16(base + 0x0A)?,
        flags: reader.u16(base + 0x0C)?,
        id: reader.u16(base + 0x0E)?,
        body,
    })
}
