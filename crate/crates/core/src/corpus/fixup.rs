//! Post-mutation repairs: the fixed literals of the boot sector and the
//! update sequence arrays of every `FILE` and `INDX` structure.

use std::fmt;

use super::{ExtentKind, MetadataExtent};
use crate::ondisk::usa::{self, FIXUP_STRIDE};
use crate::ondisk::{
    decode_boot, record_size_bytes, BOOT_SIGNATURE, INDEX_MAGIC, INDX_USA_OFFSET, OEM_NTFS,
    RECORD_MAGIC, RECORD_USA_OFFSET, SECTOR_SIZE,
};
use crate::reader::{get_u16, put_u16};

const OFF_OEM: usize = 0x03;
const OFF_END_MARKER: usize = 0x1FE;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FixupOptions {
    /// Bump the update sequence number of every repaired structure. Off by
    /// default so that unmutated round trips stay byte-identical.
    pub increment_usn: bool,
}

/// One repair or skipped repair, by image offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixupNote {
    pub offset: u64,
    pub what: String,
}

impl fmt::Display for FixupNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x} {}", self.offset, self.what)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixupLog {
    pub notes: Vec<FixupNote>,
}

impl FixupLog {
    fn note(&mut self, offset: u64, what: impl Into<String>) {
        self.notes.push(FixupNote {
            offset,
            what: what.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn skipped(&self) -> bool {
        self.notes.iter().any(|n| n.what.starts_with("skip"))
    }
}

/// Restores the OEM id and the end marker of a boot sector.
pub fn fix_boot(sector: &mut [u8], at: u64, log: &mut FixupLog) {
    if sector.len() < SECTOR_SIZE {
        log.note(at, "skip boot: short sector");
        return;
    }
    if sector[OFF_OEM..OFF_OEM + 8] != OEM_NTFS {
        sector[OFF_OEM..OFF_OEM + 8].copy_from_slice(&OEM_NTFS);
        log.note(at, "oem restored");
    }
    if get_u16(sector, OFF_END_MARKER) != BOOT_SIGNATURE {
        put_u16(sector, OFF_END_MARKER, BOOT_SIGNATURE);
        log.note(at, "end marker restored");
    }
}

/// Repairs one multi-sector structure so that it verifies: magic, array
/// placement, then every sector tail that no longer carries the usn is
/// taken as data and moved into its slot.
pub fn fix_multi_sector(
    buf: &mut [u8],
    magic: [u8; 4],
    usa_offset: u16,
    opts: &FixupOptions,
    at: u64,
    log: &mut FixupLog,
) {
    if buf.is_empty() || !buf.len().is_multiple_of(FIXUP_STRIDE) {
        log.note(at, format!("skip structure of {} bytes", buf.len()));
        return;
    }
    if buf[..4] != magic {
        buf[..4].copy_from_slice(&magic);
        log.note(at, "magic restored");
    }
    if usa::geometry(buf).is_err() {
        put_u16(buf, 0x04, usa_offset);
        put_u16(buf, 0x06, usa::expected_count(buf.len()));
        log.note(at, "usa geometry restored");
    }
    let (off, count) = usa::geometry(buf).expect("geometry restored above");
    let tail = |s: usize| s * FIXUP_STRIDE + FIXUP_STRIDE - 2;
    let sectors = count - 1;
    let mut usn = get_u16(buf, off);
    let first = get_u16(buf, tail(0));
    if first != usn && (1..sectors).all(|s| get_u16(buf, tail(s)) == first) {
        // every tail agrees, so the usn itself was hit
        usn = first;
        put_u16(buf, off, usn);
        log.note(at, "usn restored from tails");
    }
    for s in 0..sectors {
        let t = get_u16(buf, tail(s));
        if t != usn {
            put_u16(buf, off + 2 * (s + 1), t);
            put_u16(buf, tail(s), usn);
            log.note(at, format!("sector {s} tail moved to usa"));
        }
    }
    if opts.increment_usn {
        let next = match usn.wrapping_add(1) {
            0 => 1,
            n => n,
        };
        put_u16(buf, off, next);
        for s in 0..sectors {
            put_u16(buf, tail(s), next);
        }
    }
}

fn fix_extent(image: &mut [u8], e: &MetadataExtent, opts: &FixupOptions, log: &mut FixupLog) {
    let range = e.image_offset as usize..e.end() as usize;
    let buf = &mut image[range];
    match e.kind {
        ExtentKind::Boot => fix_boot(buf, e.image_offset, log),
        ExtentKind::MftRecord => fix_multi_sector(
            buf,
            RECORD_MAGIC,
            RECORD_USA_OFFSET,
            opts,
            e.image_offset,
            log,
        ),
        ExtentKind::IndexBuffer => {
            fix_multi_sector(buf, INDEX_MAGIC, INDX_USA_OFFSET, opts, e.image_offset, log)
        }
    }
}

/// Repairs exactly the given extents; bytes outside them are not touched.
pub(crate) fn fix_extents(
    image: &mut [u8],
    extents: &[MetadataExtent],
    opts: &FixupOptions,
) -> FixupLog {
    let mut log = FixupLog::default();
    for e in extents {
        fix_extent(image, e, opts, &mut log);
    }
    log
}

fn structure_size(raw: i8, cluster_bits: u32) -> Option<usize> {
    let size = record_size_bytes(raw, cluster_bits);
    (size.is_power_of_two() && (FIXUP_STRIDE as u32..=1 << 16).contains(&size))
        .then_some(size as usize)
}

/// Whole-image repair, mirror included: the boot literals, then every
/// stride-aligned `FILE` or `INDX` structure whose size the boot sector
/// declares.
pub fn apply_fixups_with(image: &mut [u8], opts: &FixupOptions) -> FixupLog {
    let mut log = FixupLog::default();
    if image.len() < SECTOR_SIZE {
        log.note(0, "skip: image shorter than a sector");
        return log;
    }
    fix_boot(&mut image[..SECTOR_SIZE], 0, &mut log);
    let boot = decode_boot(&image[..SECTOR_SIZE]).expect("sector length checked");
    let sizes = boot.cluster_bits().and_then(|bits| {
        let bps = boot.bytes_per_sector;
        if !bps.is_power_of_two() {
            return None;
        }
        Some((
            structure_size(boot.record_size_raw, bits)?,
            structure_size(boot.index_size_raw, bits)?,
        ))
    });
    let Some((rs, ibs)) = sizes else {
        log.note(0, "skip usa: boot geometry undecodable");
        return log;
    };
    let mut off = 0usize;
    while off + FIXUP_STRIDE <= image.len() {
        let (magic, len, usa_off) = match &image[off..off + 4] {
            m if m == RECORD_MAGIC => (RECORD_MAGIC, rs, RECORD_USA_OFFSET),
            m if m == INDEX_MAGIC => (INDEX_MAGIC, ibs, INDX_USA_OFFSET),
            _ => {
                off += FIXUP_STRIDE;
                continue;
            }
        };
        if off + len > image.len() {
            log.note(off as u64, "skip structure past image end");
            break;
        }
        fix_multi_sector(
            &mut image[off..off + len],
            magic,
            usa_off,
            opts,
            off as u64,
            &mut log,
        );
        off += len;
    }
    log
}

/// [`apply_fixups_with`] under the default options, on a copy.
pub fn apply_fixups(image: &[u8]) -> Vec<u8> {
    let mut out = image.to_vec();
    apply_fixups_with(&mut out, &FixupOptions::default());
    out
}
