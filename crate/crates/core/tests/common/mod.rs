//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use ntfuzz::corpus::{Corpus, ExtentKind};
use ntfuzz::forge::{build_image, case_seed, CrashCase, ForgeSpec, TreeNode};
use ntfuzz::ondisk::usa;
use ntfuzz::program::{FileOp, OpProgram};

pub const HARNESS_MAX: u32 = 64 * 1024;

/// The clean seed as `seed.img` in `dir`.
pub fn write_clean_seed(dir: &Path) {
    let img = build_image(&ForgeSpec::default()).unwrap();
    std::fs::write(dir.join("seed.img"), img).unwrap();
}

/// Every crafted case as an image/corpus pair in `dir`.
pub fn write_case_seeds(dir: &Path) {
    for case in CrashCase::ALL {
        let (base, corpus) = case_seed(case);
        std::fs::write(dir.join(format!("{case}.img")), base).unwrap();
        std::fs::write(dir.join(format!("{case}.ppra")), corpus.to_bytes()).unwrap();
    }
}

/// Forge specs across sector, cluster, record and index-block sizes.
pub fn geometry_sweep() -> Vec<ForgeSpec> {
    let mut out = Vec::new();
    for (bps, spc) in [(512u16, 1u8), (512, 8), (1024, 4), (2048, 2), (4096, 1)] {
        for (rs, ibs) in [(1024u32, 4096u32), (4096, 4096), (1024, 8192), (2048, 4096)] {
            let mut spec = ForgeSpec::with_tree(vec![
                TreeNode::file("/a", 300),
                TreeNode::dir("/d"),
                TreeNode::file("/d/x", 40).xattr("user.k", b"v"),
                TreeNode::symlink("/l", "/a"),
            ]);
            spec.bytes_per_sector = bps;
            spec.sectors_per_cluster = spc;
            spec.record_size = rs;
            spec.index_block_size = ibs;
            out.push(spec);
        }
    }
    out
}

/// The repair contract for an assembled image: boot literals and a
/// verifying update sequence array on every multi-sector extent.
pub fn verify_assembled(image: &[u8], corpus: &Corpus) -> Result<(), String> {
    if &image[3..11] != b"NTFS    " {
        return Err("oem".into());
    }
    if image[510..512] != [0x55, 0xAA] {
        return Err("end marker".into());
    }
    for e in &corpus.extents {
        let buf = &image[e.image_offset as usize..e.end() as usize];
        let magic: &[u8] = match e.kind {
            ExtentKind::Boot => continue,
            ExtentKind::MftRecord => b"FILE",
            ExtentKind::IndexBuffer => b"INDX",
        };
        if &buf[..4] != magic {
            return Err(format!("{:#x}: magic", e.image_offset));
        }
        usa::verify(buf).map_err(|err| format!("{:#x}: {err:?}", e.image_offset))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    File,
    Dir,
    Link,
}

fn rooted(p: &str) -> bool {
    p == "/"
        || (p.starts_with('/')
            && p[1..]
                .split('/')
                .all(|c| !c.is_empty() && c != "." && c != ".."))
}

fn parent(p: &str) -> &str {
    match p.rfind('/') {
        Some(0) | None => "/",
        Some(i) => &p[..i],
    }
}

fn below(p: &str, dir: &str) -> bool {
    dir == "/" || p.starts_with(&format!("{dir}/"))
}

/// Program invariants, checked without the library's status model: fds
/// name open slots of a compatible kind, paths are rooted and exist when
/// read, byte counts fit the harness buffer.
#[derive(Debug, Clone)]
pub struct InvariantChecker {
    entries: BTreeMap<String, Kind>,
    fds: BTreeMap<u32, String>,
    next_slot: u32,
}

impl InvariantChecker {
    /// Starts from the tree of `status` text (`kind path ...` lines).
    pub fn from_status_text(text: &str) -> Self {
        let mut entries = BTreeMap::new();
        let mut fds = BTreeMap::new();
        let mut next_slot = 0;
        for line in text.lines() {
            let mut w = line.split_whitespace();
            let (Some(kind), Some(path)) = (w.next(), w.next()) else {
                continue;
            };
            let kind = match kind {
                "dir" => Kind::Dir,
                "symlink" => Kind::Link,
                _ => Kind::File,
            };
            for word in w {
                if let Some(list) = word.strip_prefix("fd=") {
                    for fd in list.split(',') {
                        let fd: u32 = fd.parse().unwrap();
                        fds.insert(fd, path.to_string());
                        next_slot = next_slot.max(fd + 1);
                    }
                }
            }
            entries.insert(path.to_string(), kind);
        }
        Self {
            entries,
            fds,
            next_slot,
        }
    }

    fn exists(&self, p: &str) -> Result<Kind, String> {
        if !rooted(p) {
            return Err(format!("path `{p}` not rooted"));
        }
        self.entries
            .get(p)
            .copied()
            .ok_or_else(|| format!("path `{p}` missing"))
    }

    fn fresh(&self, p: &str) -> Result<(), String> {
        if !rooted(p) || p == "/" {
            return Err(format!("path `{p}` not creatable"));
        }
        if self.entries.contains_key(p) {
            return Err(format!("path `{p}` exists"));
        }
        match self.entries.get(parent(p)) {
            Some(Kind::Dir) => Ok(()),
            _ => Err(format!("parent of `{p}` is not a dir")),
        }
    }

    fn busy(&self, p: &str) -> bool {
        self.fds.values().any(|q| q == p)
    }

    pub fn step(&mut self, op: &FileOp) -> Result<(), String> {
        let file_fd = |fd: u32| -> Result<(), String> {
            let p = self.fds.get(&fd).ok_or(format!("fd ${fd} not open"))?;
            match self.entries.get(p) {
                Some(Kind::File) => Ok(()),
                _ => Err(format!("fd ${fd} is not a file")),
            }
        };
        let count = |n: u32| {
            if n <= HARNESS_MAX {
                Ok(())
            } else {
                Err(format!("count {n}"))
            }
        };
        match op {
            FileOp::Open { path, slot, flags } => {
                if *slot != self.next_slot {
                    return Err(format!("slot ${slot} reused"));
                }
                match self.entries.get(path.as_str()) {
                    Some(Kind::Link) => return Err("open on symlink".into()),
                    Some(_) => {}
                    None => {
                        if flags.0 & 0o100 == 0 {
                            return Err(format!("open of missing `{path}`"));
                        }
                        self.fresh(path)?;
                        self.entries.insert(path.clone(), Kind::File);
                    }
                }
                self.fds.insert(*slot, path.clone());
                self.next_slot += 1;
            }
            FileOp::Close { fd } => {
                self.fds.remove(fd).ok_or(format!("close of ${fd}"))?;
            }
            FileOp::Read { fd, count: n } | FileOp::Write { fd, count: n } => {
                file_fd(*fd)?;
                count(*n)?;
            }
            FileOp::Pread64 { fd, count: n, .. } | FileOp::Pwrite64 { fd, count: n, .. } => {
                file_fd(*fd)?;
                count(*n)?;
            }
            FileOp::Lseek { fd, .. } => {
                self.fds.get(fd).ok_or(format!("fd ${fd} not open"))?;
            }
            FileOp::Ftruncate { fd, .. } | FileOp::Fsync { fd } => file_fd(*fd)?,
            FileOp::Fdatasync { fd } => file_fd(*fd)?,
            FileOp::Truncate { path, .. } => {
                if self.exists(path)? != Kind::File {
                    return Err("truncate of non-file".into());
                }
            }
            FileOp::Link { old, new } => {
                if self.exists(old)? != Kind::File {
                    return Err("link of non-file".into());
                }
                self.fresh(new)?;
                self.entries.insert(new.clone(), Kind::File);
            }
            FileOp::Symlink { target, link } => {
                if !rooted(target) {
                    return Err("symlink target not rooted".into());
                }
                self.fresh(link)?;
                self.entries.insert(link.clone(), Kind::Link);
            }
            FileOp::Unlink { path } => {
                if self.exists(path)? == Kind::Dir || self.busy(path) {
                    return Err(format!("unlink of `{path}`"));
                }
                self.entries.remove(path);
            }
            FileOp::Mkdir { path, .. } => {
                self.fresh(path)?;
                self.entries.insert(path.clone(), Kind::Dir);
            }
            FileOp::Rmdir { path } => {
                if self.exists(path)? != Kind::Dir || path == "/" || self.busy(path) {
                    return Err(format!("rmdir of `{path}`"));
                }
                if self.entries.keys().any(|p| p != path && below(p, path)) {
                    return Err(format!("rmdir of non-empty `{path}`"));
                }
                self.entries.remove(path);
            }
            FileOp::Rename { old, new } => {
                self.exists(old)?;
                self.fresh(new)?;
                if old == "/" || below(new, old) {
                    return Err("rename into itself".into());
                }
                let moved: Vec<String> = self
                    .entries
                    .keys()
                    .filter(|p| *p == old || below(p, old))
                    .cloned()
                    .collect();
                for p in moved {
                    let k = self.entries.remove(&p).unwrap();
                    let q = format!("{new}{}", &p[old.len()..]);
                    for target in self.fds.values_mut().filter(|t| **t == p) {
                        *target = q.clone();
                    }
                    self.entries.insert(q, k);
                }
            }
            FileOp::Stat { path } | FileOp::Lstat { path } | FileOp::Utimes { path } => {
                self.exists(path)?;
            }
            FileOp::Listxattr { path, size } => {
                self.exists(path)?;
                count(*size)?;
            }
            FileOp::Setxattr { path, value, .. } => {
                if self.exists(path)? == Kind::Link {
                    return Err("setxattr on symlink".into());
                }
                if value.len() > HARNESS_MAX as usize {
                    return Err("xattr value too large".into());
                }
            }
            FileOp::Getxattr { path, size, .. } => {
                self.exists(path)?;
                count(*size)?;
            }
            FileOp::Removexattr { path, .. } => {
                self.exists(path)?;
            }
        }
        Ok(())
    }

    /// Checks every prefix of `p`; reports the first offending op.
    pub fn check(mut self, p: &OpProgram) -> Result<(), (usize, String)> {
        for (i, op) in p.ops.iter().enumerate() {
            self.step(op).map_err(|e| (i, e))?;
        }
        Ok(())
    }
}
