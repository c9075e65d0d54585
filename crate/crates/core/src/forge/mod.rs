//! Synthesis of small NTFS images the reference target mounts cleanly, plus
//! the five single-corruption reproducer cases.

mod cases;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ondisk::index::{encode_entry, IndexHeader, ENTRY_LAST, HDR_FLAG_HAS_SUBNODES};
use crate::ondisk::{
    collation_key, encode_eas, encode_runs, encode_size_raw, mft_ref, symlink_value, usa, AttrType,
    EaEntry, FileNameValue, IndexRootPreamble, PartitionBootSector, ATTR_END, BOOT_SIGNATURE,
    FILE_NAME_DIRECTORY, FLAG_DIRECTORY, FLAG_IN_USE, INDEX_MAGIC, INDX_HDR_OFFSET,
    INDX_USA_OFFSET, MFT_REC_FREE, MFT_REC_ROOT, OEM_NTFS, RECORD_MAGIC, RECORD_USA_OFFSET,
    RESIDENT_HEADER, SECTOR_SIZE,
};
use crate::reader::{put_u16, put_u32, put_u64};

pub use crate::ondisk::{symlink_target, I30, REPARSE_TAG_SYMLINK};
pub use cases::{case_seed, craft_case, CrashCase};

pub const DEFAULT_IMAGE_SIZE: u64 = 4 << 20;
/// Records 0..SYSTEM_RECORDS are formatted in use.
pub const SYSTEM_RECORDS: u64 = 12;
pub const MIRROR_RECORDS: u64 = 4;
const STANDARD_INFORMATION_LEN: usize = 0x48;
const FORGE_TIME: u64 = 0x01D9_0000_0000_0000;
const FORGE_USN: u16 = 1;

const SYSTEM_NAMES: [&str; SYSTEM_RECORDS as usize] = [
    "$MFT", "$MFTMirr", "$LogFile", "$Volume", "$AttrDef", ".", "$Bitmap", "$Boot", "$BadClus",
    "$Secure", "$UpCase", "$Extend",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    File,
    Dir,
    Symlink(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub path: String,
    pub kind: NodeKind,
    pub xattrs: Vec<(String, Vec<u8>)>,
    /// Resident `$DATA` length for files.
    pub content_len: u32,
}

impl TreeNode {
    pub fn file(path: &str, content_len: u32) -> Self {
        Self {
            path: path.into(),
            kind: NodeKind::File,
            xattrs: Vec::new(),
            content_len,
        }
    }

    pub fn dir(path: &str) -> Self {
        Self {
            path: path.into(),
            kind: NodeKind::Dir,
            xattrs: Vec::new(),
            content_len: 0,
        }
    }

    pub fn symlink(path: &str, target: &str) -> Self {
        Self {
            path: path.into(),
            kind: NodeKind::Symlink(target.into()),
            xattrs: Vec::new(),
            content_len: 0,
        }
    }

    pub fn xattr(mut self, name: &str, value: &[u8]) -> Self {
        self.xattrs.push((name.into(), value.to_vec()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgeSpec {
    pub bytes_per_sector: u16,
    pub sectors_per_cluster: u8,
    pub record_size: u32,
    pub index_block_size: u32,
    pub image_size: u64,
    pub serial: u64,
    /// Parents must precede their children.
    pub tree: Vec<TreeNode>,
}

impl Default for ForgeSpec {
    fn default() -> Self {
        Self {
            bytes_per_sector: 512,
            sectors_per_cluster: 8,
            record_size: 1024,
            index_block_size: 4096,
            image_size: DEFAULT_IMAGE_SIZE,
            serial: 0x5EED_0000_0000_0001,
            // /a is sized so its record is nearly full: a large xattr then
            // needs an attribute list
            tree: vec![TreeNode::file("/a", 528), TreeNode::dir("/d")],
        }
    }
}

impl ForgeSpec {
    pub fn with_tree(tree: Vec<TreeNode>) -> Self {
        Self {
            tree,
            ..Self::default()
        }
    }

    /// The tree the setxattr trigger program expects.
    pub fn trigger_fixture() -> Self {
        Self::with_tree(vec![
            TreeNode::file("/a", 528),
            TreeNode::file("/b", 512),
            TreeNode::file("/c", 16),
            TreeNode::dir("/d"),
            TreeNode::file("/e", 64),
            TreeNode::file("/f", 16),
            TreeNode::file("/h", 16).xattr("user.old", b"old"),
        ])
    }

    pub fn cluster_size(&self) -> u32 {
        self.bytes_per_sector as u32 * self.sectors_per_cluster as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForgeError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid tree: {0}")]
    Tree(String),
    #[error("out of space: {0}")]
    Capacity(String),
}

/// Where `build_image` put things, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cluster_size: u32,
    pub mft_offset: u64,
    pub mft_records: u64,
    pub mirror_offset: u64,
    pub root_indx_offset: u64,
}

impl Layout {
    pub fn record_offset(&self, record_size: u32, number: u64) -> u64 {
        self.mft_offset + number * record_size as u64
    }
}

struct RecordBuilder {
    buf: Vec<u8>,
    off: usize,
    next_id: u16,
}

impl RecordBuilder {
    fn new(record_size: u32, number: u64, flags: u16) -> Self {
        let mut buf = vec![0u8; record_size as usize];
        buf[..4].copy_from_slice(&RECORD_MAGIC);
        let count = usa::expected_count(buf.len());
        put_u16(&mut buf, 0x04, RECORD_USA_OFFSET);
        put_u16(&mut buf, 0x06, count);
        let attrs = (RECORD_USA_OFFSET as usize + 2 * count as usize).next_multiple_of(8);
        put_u16(&mut buf, 0x10, 1);
        put_u16(&mut buf, 0x12, 1);
        put_u16(&mut buf, 0x14, attrs as u16);
        put_u16(&mut buf, 0x16, flags);
        put_u32(&mut buf, 0x1C, record_size);
        put_u32(&mut buf, 0x2C, number as u32);
        Self {
            buf,
            off: attrs,
            next_id: 0,
        }
    }

    fn reserve(&mut self, size: usize) -> Result<usize, ForgeError> {
        // room for the end marker must remain
        if self.off + size + 8 > self.buf.len() {
            return Err(ForgeError::Capacity(format!(
                "record {} cannot hold a {size}-byte attribute",
                u32::from_le_bytes(self.buf[0x2C..0x30].try_into().unwrap())
            )));
        }
        let at = self.off;
        self.off += size;
        Ok(at)
    }

    fn header(
        &mut self,
        at: usize,
        t: AttrType,
        size: usize,
        non_res: u8,
        name: &[u16],
        name_off: usize,
    ) {
        put_u32(&mut self.buf, at, t.0);
        put_u32(&mut self.buf, at + 4, size as u32);
        self.buf[at + 8] = non_res;
        self.buf[at + 9] = name.len() as u8;
        put_u16(&mut self.buf, at + 0x0A, name_off as u16);
        put_u16(&mut self.buf, at + 0x0E, self.next_id);
        self.next_id += 1;
        for (i, u) in name.iter().enumerate() {
            put_u16(&mut self.buf, at + name_off + 2 * i, *u);
        }
    }

    fn resident(&mut self, t: AttrType, name: &str, value: &[u8]) -> Result<(), ForgeError> {
        let name: Vec<u16> = name.encode_utf16().collect();
        let name_off = RESIDENT_HEADER as usize;
        let value_off = (name_off + 2 * name.len()).next_multiple_of(8);
        let size = (value_off + value.len()).next_multiple_of(8);
        let at = self.reserve(size)?;
        self.header(at, t, size, 0, &name, name_off);
        put_u32(&mut self.buf, at + 0x10, value.len() as u32);
        put_u16(&mut self.buf, at + 0x14, value_off as u16);
        self.buf[at + value_off..at + value_off + value.len()].copy_from_slice(value);
        Ok(())
    }

    fn non_resident(
        &mut self,
        t: AttrType,
        name: &str,
        extents: &[(u64, u64)],
        cluster_size: u32,
        data_size: u64,
    ) -> Result<(), ForgeError> {
        let name: Vec<u16> = name.encode_utf16().collect();
        let name_off = 0x40;
        let run_off = (name_off + 2 * name.len()).next_multiple_of(8);
        let runs = encode_runs(extents);
        let size = (run_off + runs.len()).next_multiple_of(8);
        let at = self.reserve(size)?;
        self.header(at, t, size, 1, &name, name_off);
        let clusters: u64 = extents.iter().map(|e| e.1).sum();
        put_u64(&mut self.buf, at + 0x10, 0);
        put_u64(&mut self.buf, at + 0x18, clusters.saturating_sub(1));
        put_u16(&mut self.buf, at + 0x20, run_off as u16);
        put_u64(&mut self.buf, at + 0x28, clusters * cluster_size as u64);
        put_u64(&mut self.buf, at + 0x30, data_size);
        put_u64(&mut self.buf, at + 0x38, data_size);
        self.buf[at + run_off..at + run_off + runs.len()].copy_from_slice(&runs);
        Ok(())
    }

    fn finish(mut self) -> Vec<u8> {
        let at = self.off;
        put_u32(&mut self.buf, at, ATTR_END);
        put_u32(&mut self.buf, 0x18, (at + 8) as u32);
        put_u16(&mut self.buf, 0x28, self.next_id);
        usa::protect(&mut self.buf, FORGE_USN).expect("forged geometry is valid");
        self.buf
    }
}

fn standard_information() -> [u8; STANDARD_INFORMATION_LEN] {
    let mut v = [0u8; STANDARD_INFORMATION_LEN];
    for i in 0..4 {
        put_u64(&mut v, 8 * i, FORGE_TIME);
    }
    v
}

struct Node {
    name: String,
    parent: u64,
    record: u64,
    spec: TreeNode,
}

fn split_path(path: &str) -> Result<(&str, &str), ForgeError> {
    let bad = || {
        ForgeError::Tree(format!(
            "`{path}` is not an absolute path with a final component"
        ))
    };
    if !path.starts_with('/') || path.len() < 2 || path.ends_with('/') || path.contains("//") {
        return Err(bad());
    }
    let cut = path.rfind('/').ok_or_else(bad)?;
    let parent = if cut == 0 { "/" } else { &path[..cut] };
    let name = &path[cut + 1..];
    if name.encode_utf16().count() > 255 {
        return Err(bad());
    }
    Ok((parent, name))
}

fn validate(spec: &ForgeSpec) -> Result<u32, ForgeError> {
    let geo = |m: String| Err(ForgeError::Geometry(m));
    let bps = spec.bytes_per_sector as u32;
    if !bps.is_power_of_two() || !(512..=4096).contains(&bps) {
        return geo(format!("bytes_per_sector {bps}"));
    }
    let spc = spec.sectors_per_cluster as u32;
    if !spc.is_power_of_two() || spc > 128 {
        return geo(format!("sectors_per_cluster {spc}"));
    }
    let cs = spec.cluster_size();
    if !spec.record_size.is_power_of_two() || !(512..=65536).contains(&spec.record_size) {
        return geo(format!("record_size {}", spec.record_size));
    }
    if !spec.index_block_size.is_power_of_two() || !(512..=65536).contains(&spec.index_block_size) {
        return geo(format!("index_block_size {}", spec.index_block_size));
    }
    if encode_size_raw(spec.record_size, cs).is_none()
        || encode_size_raw(spec.index_block_size, cs).is_none()
    {
        return geo("record or index size not encodable for this cluster size".into());
    }
    if !spec.image_size.is_multiple_of(cs as u64) || spec.image_size < 16 * cs as u64 {
        return geo(format!("image_size {} vs cluster {cs}", spec.image_size));
    }
    Ok(cs)
}

/// Builds a complete image for `spec`.
pub fn build_image(spec: &ForgeSpec) -> Result<Vec<u8>, ForgeError> {
    build_image_with_layout(spec).map(|(img, _)| img)
}

pub fn build_image_with_layout(spec: &ForgeSpec) -> Result<(Vec<u8>, Layout), ForgeError> {
    let cs = validate(spec)?;
    let rs = spec.record_size;
    let ibs = spec.index_block_size;

    // resolve the tree to records
    let mut records: BTreeMap<String, (u64, bool)> = BTreeMap::new();
    records.insert("/".into(), (MFT_REC_ROOT, true));
    let mut nodes = Vec::new();
    for (i, t) in spec.tree.iter().enumerate() {
        let (parent, name) = split_path(&t.path)?;
        let &(parent_rec, parent_is_dir) = records.get(parent).ok_or_else(|| {
            ForgeError::Tree(format!("parent of `{}` not declared before it", t.path))
        })?;
        if !parent_is_dir {
            return Err(ForgeError::Tree(format!(
                "parent of `{}` is not a directory",
                t.path
            )));
        }
        let record = MFT_REC_FREE + i as u64;
        if records
            .insert(t.path.clone(), (record, t.kind == NodeKind::Dir))
            .is_some()
        {
            return Err(ForgeError::Tree(format!("`{}` declared twice", t.path)));
        }
        nodes.push(Node {
            name: name.into(),
            parent: parent_rec,
            record,
            spec: t.clone(),
        });
    }

    // cluster layout: boot | mirror | MFT | root INDX | ... | backup boot
    let clusters = |bytes: u64| bytes.div_ceil(cs as u64);
    let per_cluster = (cs / rs).max(1) as u64;
    let mft_records = (MFT_REC_FREE + nodes.len() as u64 + 8).next_multiple_of(per_cluster);
    let mirror_lcn = 1u64;
    let mirror_clusters = clusters(MIRROR_RECORDS * rs as u64);
    let mft_lcn = mirror_lcn + mirror_clusters;
    let mft_clusters = clusters(mft_records * rs as u64);
    let indx_lcn = mft_lcn + mft_clusters;
    let indx_clusters = clusters(ibs as u64);
    let end = (indx_lcn + indx_clusters) * cs as u64;
    if end + spec.bytes_per_sector as u64 > spec.image_size {
        return Err(ForgeError::Capacity(format!(
            "metadata needs {end} bytes in a {}-byte image",
            spec.image_size
        )));
    }
    let layout = Layout {
        cluster_size: cs,
        mft_offset: mft_lcn * cs as u64,
        mft_records,
        mirror_offset: mirror_lcn * cs as u64,
        root_indx_offset: indx_lcn * cs as u64,
    };

    let mut img = vec![0u8; spec.image_size as usize];
    let boot = boot_sector(spec, cs, mft_lcn, mirror_lcn);
    img[..SECTOR_SIZE].copy_from_slice(&boot);
    let backup = spec.image_size as usize - spec.bytes_per_sector as usize;
    img[backup..backup + SECTOR_SIZE].copy_from_slice(&boot);

    let mut children: BTreeMap<u64, Vec<&Node>> = BTreeMap::new();
    for n in &nodes {
        children.entry(n.parent).or_default().push(n);
    }
    for list in children.values_mut() {
        list.sort_by_key(|n| collation_key(&n.name));
    }
    let no_children = Vec::new();

    let mut put_record = |number: u64, bytes: Vec<u8>| {
        let at = layout.record_offset(rs, number) as usize;
        img[at..at + rs as usize].copy_from_slice(&bytes);
    };

    // system records
    let root_ref = mft_ref(MFT_REC_ROOT, 1);
    for number in 0..SYSTEM_RECORDS {
        let is_root = number == MFT_REC_ROOT;
        let flags = FLAG_IN_USE | if is_root { FLAG_DIRECTORY } else { 0 };
        let mut b = RecordBuilder::new(rs, number, flags);
        b.resident(AttrType::STANDARD_INFORMATION, "", &standard_information())?;
        let fname = FileNameValue {
            parent_ref: root_ref,
            alloc_size: 0,
            data_size: 0,
            flags: if is_root { FILE_NAME_DIRECTORY } else { 0 },
            namespace: 3,
            name: SYSTEM_NAMES[number as usize].into(),
        };
        b.resident(AttrType::FILE_NAME, "", &fname.encode())?;
        match number {
            0 => {
                b.non_resident(
                    AttrType::DATA,
                    "",
                    &[(mft_lcn, mft_clusters)],
                    cs,
                    mft_records * rs as u64,
                )?;
                let mut bitmap = vec![0u8; (mft_records as usize).div_ceil(8).next_multiple_of(8)];
                let in_use = (0..SYSTEM_RECORDS).chain(nodes.iter().map(|n| n.record));
                for r in in_use {
                    bitmap[r as usize / 8] |= 1 << (r % 8);
                }
                b.resident(AttrType::BITMAP, "", &bitmap)?;
            }
            1 => b.non_resident(
                AttrType::DATA,
                "",
                &[(mirror_lcn, mirror_clusters)],
                cs,
                MIRROR_RECORDS * rs as u64,
            )?,
            MFT_REC_ROOT => {
                let preamble = index_preamble(ibs, cs);
                let end_entry = encode_entry(0, &[], ENTRY_LAST, Some(0));
                b.resident(
                    AttrType::INDEX_ROOT,
                    I30,
                    &index_root_value(&preamble, &end_entry, HDR_FLAG_HAS_SUBNODES),
                )?;
                b.non_resident(
                    AttrType::INDEX_ALLOCATION,
                    I30,
                    &[(indx_lcn, indx_clusters)],
                    cs,
                    ibs as u64,
                )?;
                b.resident(AttrType::BITMAP, I30, &[1, 0, 0, 0, 0, 0, 0, 0])?;
            }
            _ => b.resident(AttrType::DATA, "", &[])?,
        }
        put_record(number, b.finish());
    }

    // formatted but free records
    for number in SYSTEM_RECORDS..mft_records {
        if number < MFT_REC_FREE || number >= MFT_REC_FREE + nodes.len() as u64 {
            put_record(number, RecordBuilder::new(rs, number, 0).finish());
        }
    }

    // user records
    for n in &nodes {
        let is_dir = n.spec.kind == NodeKind::Dir;
        let flags = FLAG_IN_USE | if is_dir { FLAG_DIRECTORY } else { 0 };
        let mut b = RecordBuilder::new(rs, n.record, flags);
        b.resident(AttrType::STANDARD_INFORMATION, "", &standard_information())?;
        b.resident(AttrType::FILE_NAME, "", &file_name_of(n).encode())?;
        if !n.spec.xattrs.is_empty() {
            let eas: Vec<EaEntry> = n
                .spec
                .xattrs
                .iter()
                .map(|(name, value)| EaEntry {
                    flags: 0,
                    name: name.clone(),
                    value: value.clone(),
                })
                .collect();
            let packed = encode_eas(&eas);
            let mut info = [0u8; 8];
            put_u16(&mut info, 0, packed.len() as u16);
            put_u32(&mut info, 4, packed.len() as u32);
            b.resident(AttrType::EA_INFORMATION, "", &info)?;
            b.resident(AttrType::EA, "", &packed)?;
        }
        match &n.spec.kind {
            NodeKind::File => {
                let content: Vec<u8> = (0..n.spec.content_len)
                    .map(|i| (i as u64 * 31 + n.record) as u8)
                    .collect();
                b.resident(AttrType::DATA, "", &content)?;
            }
            NodeKind::Symlink(target) => {
                b.resident(AttrType::REPARSE_POINT, "", &symlink_value(target))?;
            }
            NodeKind::Dir => {
                let mut entries = Vec::new();
                for child in children.get(&n.record).unwrap_or(&no_children) {
                    entries.extend(child_entry(child));
                }
                entries.extend(encode_entry(0, &[], ENTRY_LAST, None));
                let preamble = index_preamble(ibs, cs);
                b.resident(
                    AttrType::INDEX_ROOT,
                    I30,
                    &index_root_value(&preamble, &entries, 0),
                )?;
            }
        }
        put_record(n.record, b.finish());
    }

    // root's single index block
    let root_children = children.get(&MFT_REC_ROOT).unwrap_or(&no_children);
    let indx = index_block(ibs, 0, root_children)?;
    let at = layout.root_indx_offset as usize;
    img[at..at + ibs as usize].copy_from_slice(&indx);

    // mirror of the first records
    let mirror_len = (MIRROR_RECORDS * rs as u64) as usize;
    let src = layout.mft_offset as usize;
    img.copy_within(src..src + mirror_len, layout.mirror_offset as usize);

    Ok((img, layout))
}

fn boot_sector(spec: &ForgeSpec, cs: u32, mft_lcn: u64, mirror_lcn: u64) -> [u8; SECTOR_SIZE] {
    let mut template = [0u8; SECTOR_SIZE];
    template[0x15] = 0xF8;
    put_u16(&mut template, 0x18, 63);
    put_u16(&mut template, 0x1A, 255);
    let boot = PartitionBootSector {
        jump: [0xEB, 0x52, 0x90],
        oem_id: OEM_NTFS,
        bytes_per_sector: spec.bytes_per_sector,
        sectors_per_cluster: spec.sectors_per_cluster,
        total_sectors: spec.image_size / spec.bytes_per_sector as u64 - 1,
        mft_cluster: mft_lcn,
        mft_mirror_cluster: mirror_lcn,
        record_size_raw: encode_size_raw(spec.record_size, cs).expect("validated"),
        index_size_raw: encode_size_raw(spec.index_block_size, cs).expect("validated"),
        volume_serial: spec.serial,
        end_marker: BOOT_SIGNATURE,
    };
    boot.encode(&template)
}

fn index_preamble(ibs: u32, cs: u32) -> IndexRootPreamble {
    IndexRootPreamble {
        indexed_type: AttrType::FILE_NAME.0,
        collation: 1,
        index_block_size: ibs,
        clusters_per_block: if ibs >= cs {
            (ibs / cs) as u8
        } else {
            (ibs / 512) as u8
        },
    }
}

fn index_root_value(preamble: &IndexRootPreamble, entries: &[u8], flags: u8) -> Vec<u8> {
    let mut v = preamble.encode().to_vec();
    let hdr_at = v.len();
    v.resize(hdr_at + IndexHeader::LEN as usize, 0);
    let used = IndexHeader::LEN + entries.len() as u32;
    IndexHeader {
        entries_off: IndexHeader::LEN,
        used,
        total: used,
        flags,
    }
    .write(&mut v, hdr_at);
    v.extend_from_slice(entries);
    v
}

fn file_name_of(n: &Node) -> FileNameValue {
    let is_dir = n.spec.kind == NodeKind::Dir;
    FileNameValue {
        parent_ref: mft_ref(n.parent, 1),
        alloc_size: (n.spec.content_len as u64).next_multiple_of(8),
        data_size: n.spec.content_len as u64,
        flags: if is_dir { FILE_NAME_DIRECTORY } else { 0 },
        namespace: 1,
        name: n.name.clone(),
    }
}

fn child_entry(n: &Node) -> Vec<u8> {
    encode_entry(mft_ref(n.record, 1), &file_name_of(n).encode(), 0, None)
}

fn index_block(ibs: u32, vbn: u64, children: &[&Node]) -> Result<Vec<u8>, ForgeError> {
    let mut buf = vec![0u8; ibs as usize];
    buf[..4].copy_from_slice(&INDEX_MAGIC);
    let count = usa::expected_count(buf.len());
    put_u16(&mut buf, 0x04, INDX_USA_OFFSET);
    put_u16(&mut buf, 0x06, count);
    put_u64(&mut buf, 0x10, vbn);
    let first = (INDX_USA_OFFSET as usize + 2 * count as usize).next_multiple_of(8);
    let mut off = first;
    let mut push = |bytes: Vec<u8>, buf: &mut Vec<u8>| -> Result<(), ForgeError> {
        if off + bytes.len() > buf.len() {
            return Err(ForgeError::Capacity(
                "root directory overflows its index block".into(),
            ));
        }
        buf[off..off + bytes.len()].copy_from_slice(&bytes);
        off += bytes.len();
        Ok(())
    };
    for child in children {
        push(child_entry(child), &mut buf)?;
    }
    push(encode_entry(0, &[], ENTRY_LAST, None), &mut buf)?;
    IndexHeader {
        entries_off: (first - INDX_HDR_OFFSET) as u32,
        used: (off - INDX_HDR_OFFSET) as u32,
        total: ibs - INDX_HDR_OFFSET as u32,
        flags: 0,
    }
    .write(&mut buf, INDX_HDR_OFFSET);
    usa::protect(&mut buf, FORGE_USN).expect("forged geometry is valid");
    Ok(buf)
}
