//! Condensed metadata corpora: extraction from an image, write-back through
//! the extent table, and the fixups that keep mutated images consistent.
//!
//! A corpus holds the metadata bytes, the extents they came from, a
//! program and the status it runs against. The base image itself is kept
//! by reference: whoever assembles supplies it.

mod container;
mod fixup;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ondisk::{
    decode_boot, decode_eas, decode_runs, map_extent, record_size_bytes, ref_record,
    symlink_target, AttrBody, AttrType, FileNameValue, FileRecord, Run, FIXUP_STRIDE, I30,
    INDEX_MAGIC, MFT_REC_FREE, MFT_REC_ROOT, RECORD_MAGIC, SECTOR_SIZE,
};
use crate::program::{join, Entry, EntryKind, FsStatus, OpProgram, ParseError};

pub use container::{read_corpus, write_corpus, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use fixup::{
    apply_fixups, apply_fixups_with, fix_boot, fix_multi_sector, FixupLog, FixupNote, FixupOptions,
};

/// Records past this are never scanned, whatever `$MFT` claims.
const MAX_SCAN_RECORDS: u64 = 1 << 16;
/// Index blocks taken from one directory's allocation.
const MAX_DIR_BLOCKS: u64 = 1024;
/// Parent hops allowed while naming a record.
const MAX_PATH_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtentKind {
    Boot,
    MftRecord,
    IndexBuffer,
}

impl ExtentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtentKind::Boot => "boot",
            ExtentKind::MftRecord => "mft_record",
            ExtentKind::IndexBuffer => "index_buffer",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ExtentKind::Boot => 0,
            ExtentKind::MftRecord => 1,
            ExtentKind::IndexBuffer => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ExtentKind::Boot),
            1 => Some(ExtentKind::MftRecord),
            2 => Some(ExtentKind::IndexBuffer),
            _ => None,
        }
    }
}

/// One piece of metadata: where it sits in the image and what it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MetadataExtent {
    pub image_offset: u64,
    pub length: u32,
    pub kind: ExtentKind,
}

impl MetadataExtent {
    pub fn end(&self) -> u64 {
        self.image_offset + self.length as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub metadata: Vec<u8>,
    pub extents: Vec<MetadataExtent>,
    pub program: OpProgram,
    pub status: FsStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("extraction failed at {stage}: {detail}")]
    Extract { stage: &'static str, detail: String },
    #[error("extent {offset:#x}+{length:#x} lies outside the {image_len}-byte image")]
    ExtentRange {
        offset: u64,
        length: u32,
        image_len: usize,
    },
    #[error("extents are unsorted or overlap at {0:#x}")]
    ExtentOrder(u64),
    #[error("extents cover {extents} bytes but the blob holds {blob}")]
    BlobLength { extents: u64, blob: usize },
    #[error("corpus container: {0}")]
    Container(String),
    #[error("corpus container text: {0}")]
    Text(#[from] ParseError),
}

fn stage(stage: &'static str, detail: impl Into<String>) -> CorpusError {
    CorpusError::Extract {
        stage,
        detail: detail.into(),
    }
}

/// What extraction needs from the boot sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    cluster_size: u32,
    record_size: u32,
    index_size: u32,
    mft_offset: u64,
}

fn probe(image: &[u8]) -> Result<Layout, CorpusError> {
    let sector = image
        .get(..SECTOR_SIZE)
        .ok_or_else(|| stage("boot", format!("image of {} bytes", image.len())))?;
    let boot = decode_boot(sector).map_err(|e| stage("boot", e.to_string()))?;
    if boot.end_marker != crate::ondisk::BOOT_SIGNATURE {
        return Err(stage(
            "boot",
            format!("end marker {:#06x}", boot.end_marker),
        ));
    }
    let bits = boot
        .cluster_bits()
        .ok_or_else(|| stage("geometry", "cluster size is not a power of two"))?;
    let size = |raw: i8, what: &str| {
        let s = record_size_bytes(raw, bits);
        if s.is_power_of_two() && (FIXUP_STRIDE as u32..=1 << 16).contains(&s) {
            Ok(s)
        } else {
            Err(stage("geometry", format!("{what} size {s}")))
        }
    };
    let record_size = size(boot.record_size_raw, "record")?;
    let index_size = size(boot.index_size_raw, "index")?;
    let cluster_size = 1u32 << bits;
    let mft_offset = boot
        .mft_cluster
        .checked_mul(cluster_size as u64)
        .filter(|off| off + record_size as u64 <= image.len() as u64)
        .ok_or_else(|| {
            stage(
                "mft_location",
                format!("cluster {:#x} outside the image", boot.mft_cluster),
            )
        })?;
    Ok(Layout {
        cluster_size,
        record_size,
        index_size,
        mft_offset,
    })
}

fn nonresident_runs(rec: &FileRecord, t: AttrType, name: &str) -> Option<(Vec<Run>, u64)> {
    let attr = rec
        .attributes
        .iter()
        .find(|a| a.attr_type == t && a.name(&rec.raw).as_deref() == Some(name))?;
    let AttrBody::NonResident { data_size, .. } = attr.body else {
        return None;
    };
    let runs = decode_runs(attr.run_bytes(&rec.raw)?).ok()?;
    Some((runs, data_size))
}

/// `$MFT`'s runs and the image offset of every record they map.
fn mft_records(image: &[u8], l: &Layout) -> Result<Vec<(u64, u64)>, CorpusError> {
    let rs = l.record_size as usize;
    let at = l.mft_offset as usize;
    let rec0 = FileRecord::decode(&image[at..at + rs], rs, true)
        .map_err(|e| stage("mft_record", e.to_string()))?;
    let (runs, data_size) = nonresident_runs(&rec0, AttrType::DATA, "")
        .ok_or_else(|| stage("mft_data", "no decodable non-resident $DATA in record 0"))?;
    let count = (data_size / rs as u64).min(MAX_SCAN_RECORDS);
    Ok((0..count)
        .filter_map(|n| {
            let off = map_extent(&runs, l.cluster_size, n * rs as u64, rs as u64, image.len())?;
            Some((n, off))
        })
        .collect())
}

fn in_use_record(image: &[u8], off: u64, rs: u32) -> Option<FileRecord> {
    let bytes = &image[off as usize..off as usize + rs as usize];
    if bytes[..4] != RECORD_MAGIC {
        return None;
    }
    let rec = FileRecord::decode(bytes, rs as usize, true).ok()?;
    rec.in_use().then_some(rec)
}

fn index_blocks(image: &[u8], rec: &FileRecord, l: &Layout) -> Vec<u64> {
    let Some((runs, data_size)) = nonresident_runs(rec, AttrType::INDEX_ALLOCATION, I30) else {
        return Vec::new();
    };
    let ibs = l.index_size as u64;
    (0..(data_size / ibs).min(MAX_DIR_BLOCKS))
        .filter_map(|b| map_extent(&runs, l.cluster_size, b * ibs, ibs, image.len()))
        .filter(|&off| image[off as usize..off as usize + 4] == INDEX_MAGIC)
        .collect()
}

struct Named {
    name: String,
    parent: u64,
    kind: EntryKind,
    xattrs: BTreeSet<String>,
}

fn describe(rec: &FileRecord) -> Option<Named> {
    let fname = rec
        .attributes
        .iter()
        .filter(|a| a.attr_type == AttrType::FILE_NAME)
        .filter_map(|a| FileNameValue::decode(a.value(&rec.raw)?))
        // DOS-only names (namespace 2) shadow a long name elsewhere
        .find(|f| f.namespace != 2)?;
    let value = |t: AttrType| rec.find(t).and_then(|a| a.value(&rec.raw));
    let kind = if rec.is_directory() {
        EntryKind::Dir
    } else if value(AttrType::REPARSE_POINT)
        .and_then(symlink_target)
        .is_some()
    {
        EntryKind::Symlink
    } else {
        EntryKind::File
    };
    let xattrs = value(AttrType::EA)
        .and_then(decode_eas)
        .map(|eas| eas.into_iter().map(|e| e.name).collect())
        .unwrap_or_default();
    Some(Named {
        name: fname.name,
        parent: ref_record(fname.parent_ref),
        kind,
        xattrs,
    })
}

fn path_of(n: u64, named: &BTreeMap<u64, Named>) -> Option<String> {
    let mut parts = Vec::new();
    let mut cur = n;
    for _ in 0..MAX_PATH_DEPTH {
        if cur == MFT_REC_ROOT {
            let path = parts
                .iter()
                .rev()
                .fold("/".to_string(), |acc, p: &&str| join(&acc, p));
            return Some(path);
        }
        let node = named.get(&cur)?;
        if node.name.is_empty() || node.name.contains('/') {
            return None;
        }
        parts.push(node.name.as_str());
        cur = node.parent;
    }
    None
}

/// The status file implied by the records' file names.
fn scan_status(named: &BTreeMap<u64, Named>) -> FsStatus {
    let mut status = FsStatus::default();
    for (&n, node) in named.range(MFT_REC_FREE..) {
        let Some(path) = path_of(n, named) else {
            continue;
        };
        let mut entry = Entry::new(node.kind);
        entry.xattrs = node.xattrs.clone();
        status.entries.insert(path, entry);
    }
    // drop entries whose ancestors are not directories
    let dirs: BTreeSet<String> = status
        .entries
        .iter()
        .filter(|(_, e)| e.kind == EntryKind::Dir)
        .map(|(p, _)| p.clone())
        .collect();
    status
        .entries
        .retain(|p, _| p == "/" || dirs.contains(crate::program::parent_of(p)));
    status
}

fn normalize(mut extents: Vec<MetadataExtent>) -> Vec<MetadataExtent> {
    extents.sort();
    let mut out: Vec<MetadataExtent> = Vec::with_capacity(extents.len());
    for e in extents {
        if out.last().is_none_or(|last| last.end() <= e.image_offset) {
            out.push(e);
        }
    }
    out
}

/// Condenses `image` into a corpus with an empty program.
pub fn extract_corpus(image: &[u8]) -> Result<Corpus, CorpusError> {
    let l = probe(image)?;
    let records = mft_records(image, &l)?;
    let mut extents = vec![MetadataExtent {
        image_offset: 0,
        length: SECTOR_SIZE as u32,
        kind: ExtentKind::Boot,
    }];
    let mut named = BTreeMap::new();
    for &(n, off) in &records {
        let Some(rec) = in_use_record(image, off, l.record_size) else {
            continue;
        };
        extents.push(MetadataExtent {
            image_offset: off,
            length: l.record_size,
            kind: ExtentKind::MftRecord,
        });
        if rec.is_directory() {
            extents.extend(
                index_blocks(image, &rec, &l)
                    .into_iter()
                    .map(|image_offset| MetadataExtent {
                        image_offset,
                        length: l.index_size,
                        kind: ExtentKind::IndexBuffer,
                    }),
            );
        }
        if n >= MFT_REC_FREE {
            if let Some(d) = describe(&rec) {
                named.insert(n, d);
            }
        }
    }
    let extents = normalize(extents);
    let metadata = extents
        .iter()
        .flat_map(|e| &image[e.image_offset as usize..e.end() as usize])
        .copied()
        .collect();
    Ok(Corpus {
        metadata,
        extents,
        program: OpProgram::default(),
        status: scan_status(&named),
    })
}

impl Corpus {
    /// Checks the extent table against the blob and an image length.
    pub fn validate(&self, image_len: usize) -> Result<(), CorpusError> {
        let mut prev_end = 0u64;
        let mut total = 0u64;
        for (i, e) in self.extents.iter().enumerate() {
            if e.image_offset
                .checked_add(e.length as u64)
                .is_none_or(|end| end > image_len as u64)
            {
                return Err(CorpusError::ExtentRange {
                    offset: e.image_offset,
                    length: e.length,
                    image_len,
                });
            }
            if i > 0 && e.image_offset < prev_end {
                return Err(CorpusError::ExtentOrder(e.image_offset));
            }
            prev_end = e.end();
            total += e.length as u64;
        }
        if total != self.metadata.len() as u64 {
            return Err(CorpusError::BlobLength {
                extents: total,
                blob: self.metadata.len(),
            });
        }
        Ok(())
    }

    /// Blob offset of each extent, in extent order.
    pub fn blob_offsets(&self) -> impl Iterator<Item = (usize, &MetadataExtent)> {
        self.extents.iter().scan(0usize, |pos, e| {
            let at = *pos;
            *pos += e.length as usize;
            Some((at, e))
        })
    }

    /// The image offset behind blob byte `blob_offset`, with its extent.
    pub fn locate(&self, blob_offset: usize) -> Option<(u64, &MetadataExtent)> {
        self.blob_offsets()
            .find(|(at, e)| (*at..*at + e.length as usize).contains(&blob_offset))
            .map(|(at, e)| (e.image_offset + (blob_offset - at) as u64, e))
    }

    /// The bytes `image` holds under this corpus's extents.
    pub fn gather_blob(&self, image: &[u8]) -> Result<Vec<u8>, CorpusError> {
        let mut probe = self.clone();
        probe.metadata = self
            .extents
            .iter()
            .filter(|e| e.end() <= image.len() as u64)
            .flat_map(|e| &image[e.image_offset as usize..e.end() as usize])
            .copied()
            .collect();
        probe.validate(image.len())?;
        Ok(probe.metadata)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_corpus(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        read_corpus(bytes)
    }
}

/// Writes the blob over `base` into `out`, then repairs the extents.
/// `out` is reused across calls to avoid reallocating the image.
pub fn assemble_into(
    out: &mut Vec<u8>,
    base: &[u8],
    c: &Corpus,
    opts: &FixupOptions,
) -> Result<FixupLog, CorpusError> {
    c.validate(base.len())?;
    out.clear();
    out.extend_from_slice(base);
    for (at, e) in c.blob_offsets() {
        out[e.image_offset as usize..e.end() as usize]
            .copy_from_slice(&c.metadata[at..at + e.length as usize]);
    }
    Ok(fixup::fix_extents(out, &c.extents, opts))
}

/// Repeated assembly over one base image. Only the extents written by the
/// previous call are reset, so a round costs the metadata size rather than
/// the image size.
pub struct Assembler<'b> {
    base: &'b [u8],
    buf: Vec<u8>,
    dirty: Vec<MetadataExtent>,
}

impl<'b> Assembler<'b> {
    pub fn new(base: &'b [u8]) -> Self {
        Self {
            base,
            buf: base.to_vec(),
            dirty: Vec::new(),
        }
    }

    pub fn assemble(&mut self, c: &Corpus, opts: &FixupOptions) -> Result<&[u8], CorpusError> {
        c.validate(self.base.len())?;
        for e in self.dirty.drain(..) {
            let r = e.image_offset as usize..e.end() as usize;
            self.buf[r.clone()].copy_from_slice(&self.base[r]);
        }
        for (at, e) in c.blob_offsets() {
            self.buf[e.image_offset as usize..e.end() as usize]
                .copy_from_slice(&c.metadata[at..at + e.length as usize]);
        }
        self.dirty.extend_from_slice(&c.extents);
        fixup::fix_extents(&mut self.buf, &c.extents, opts);
        Ok(&self.buf)
    }
}

/// `base` with the corpus metadata written back and fixed up.
pub fn assemble_image(base: &[u8], c: &Corpus) -> Result<Vec<u8>, CorpusError> {
    let mut out = Vec::with_capacity(base.len());
    assemble_into(&mut out, base, c, &FixupOptions::default())?;
    Ok(out)
}
