//! File-operation programs and the status model that keeps them
//! context-valid.

mod synth;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub use synth::{generate_op, generate_op_with, mutate_program, mutate_program_with, GEN_MAX_OPS};
pub use text::{parse_op, parse_program, serialize_op, serialize_program, ParseError};

/// Harness buffer bound on byte counts and xattr values.
pub const MAX_COUNT: u32 = 64 * 1024;
pub const XATTR_CREATE: u8 = 1;
pub const XATTR_REPLACE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct OpenFlags(pub u32);

impl OpenFlags {
    pub const RDONLY: OpenFlags = OpenFlags(0);
    pub const WRONLY: OpenFlags = OpenFlags(0o1);
    pub const RDWR: OpenFlags = OpenFlags(0o2);
    pub const CREAT: OpenFlags = OpenFlags(0o100);
    pub const EXCL: OpenFlags = OpenFlags(0o200);
    pub const TRUNC: OpenFlags = OpenFlags(0o1000);
    pub const APPEND: OpenFlags = OpenFlags(0o2000);
    pub const DIRECTORY: OpenFlags = OpenFlags(0o200000);

    pub(crate) const NAMED: [(&'static str, OpenFlags); 6] = [
        ("CREAT", OpenFlags::CREAT),
        ("EXCL", OpenFlags::EXCL),
        ("TRUNC", OpenFlags::TRUNC),
        ("APPEND", OpenFlags::APPEND),
        ("DIRECTORY", OpenFlags::DIRECTORY),
        ("WRONLY", OpenFlags::WRONLY),
    ];

    pub fn access(self) -> u32 {
        self.0 & 0o3
    }

    pub fn contains(self, other: OpenFlags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for OpenFlags {
    type Output = OpenFlags;

    fn bitor(self, rhs: OpenFlags) -> OpenFlags {
        OpenFlags(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Open,
    Close,
    Read,
    Pread64,
    Write,
    Pwrite64,
    Lseek,
    Truncate,
    Ftruncate,
    Fsync,
    Fdatasync,
    Link,
    Symlink,
    Unlink,
    Mkdir,
    Rmdir,
    Rename,
    Stat,
    Lstat,
    Setxattr,
    Getxattr,
    Listxattr,
    Removexattr,
    Utimes,
}

/// Which descriptors an fd-taking op accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdKind {
    File,
    Any,
}

impl OpKind {
    pub const ALL: [OpKind; 24] = [
        OpKind::Open,
        OpKind::Close,
        OpKind::Read,
        OpKind::Pread64,
        OpKind::Write,
        OpKind::Pwrite64,
        OpKind::Lseek,
        OpKind::Truncate,
        OpKind::Ftruncate,
        OpKind::Fsync,
        OpKind::Fdatasync,
        OpKind::Link,
        OpKind::Symlink,
        OpKind::Unlink,
        OpKind::Mkdir,
        OpKind::Rmdir,
        OpKind::Rename,
        OpKind::Stat,
        OpKind::Lstat,
        OpKind::Setxattr,
        OpKind::Getxattr,
        OpKind::Listxattr,
        OpKind::Removexattr,
        OpKind::Utimes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Open => "open",
            OpKind::Close => "close",
            OpKind::Read => "read",
            OpKind::Pread64 => "pread64",
            OpKind::Write => "write",
            OpKind::Pwrite64 => "pwrite64",
            OpKind::Lseek => "lseek",
            OpKind::Truncate => "truncate",
            OpKind::Ftruncate => "ftruncate",
            OpKind::Fsync => "fsync",
            OpKind::Fdatasync => "fdatasync",
            OpKind::Link => "link",
            OpKind::Symlink => "symlink",
            OpKind::Unlink => "unlink",
            OpKind::Mkdir => "mkdir",
            OpKind::Rmdir => "rmdir",
            OpKind::Rename => "rename",
            OpKind::Stat => "stat",
            OpKind::Lstat => "lstat",
            OpKind::Setxattr => "setxattr",
            OpKind::Getxattr => "getxattr",
            OpKind::Listxattr => "listxattr",
            OpKind::Removexattr => "removexattr",
            OpKind::Utimes => "utimes",
        }
    }

    /// The fd compatibility table. `None` for ops that take no descriptor.
    pub fn fd_kind(self) -> Option<FdKind> {
        match self {
            OpKind::Read
            | OpKind::Pread64
            | OpKind::Write
            | OpKind::Pwrite64
            | OpKind::Ftruncate
            | OpKind::Fsync
            | OpKind::Fdatasync => Some(FdKind::File),
            OpKind::Lseek | OpKind::Close => Some(FdKind::Any),
            _ => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One file operation. Descriptors are symbolic slots: `Open` binds `slot`,
/// later ops name it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FileOp {
    Open {
        path: String,
        flags: OpenFlags,
        slot: u32,
    },
    Close {
        fd: u32,
    },
    Read {
        fd: u32,
        count: u32,
    },
    Pread64 {
        fd: u32,
        count: u32,
        offset: u64,
    },
    Write {
        fd: u32,
        count: u32,
    },
    Pwrite64 {
        fd: u32,
        count: u32,
        offset: u64,
    },
    Lseek {
        fd: u32,
        offset: i64,
        whence: u8,
    },
    Truncate {
        path: String,
        len: u64,
    },
    Ftruncate {
        fd: u32,
        len: u64,
    },
    Fsync {
        fd: u32,
    },
    Fdatasync {
        fd: u32,
    },
    Link {
        old: String,
        new: String,
    },
    Symlink {
        target: String,
        link: String,
    },
    Unlink {
        path: String,
    },
    Mkdir {
        path: String,
        mode: u32,
    },
    Rmdir {
        path: String,
    },
    Rename {
        old: String,
        new: String,
    },
    Stat {
        path: String,
    },
    Lstat {
        path: String,
    },
    Setxattr {
        path: String,
        name: String,
        value: Vec<u8>,
        flags: u8,
    },
    Getxattr {
        path: String,
        name: String,
        size: u32,
    },
    Listxattr {
        path: String,
        size: u32,
    },
    Removexattr {
        path: String,
        name: String,
    },
    Utimes {
        path: String,
    },
}

impl FileOp {
    pub fn kind(&self) -> OpKind {
        match self {
            FileOp::Open { .. } => OpKind::Open,
            FileOp::Close { .. } => OpKind::Close,
            FileOp::Read { .. } => OpKind::Read,
            FileOp::Pread64 { .. } => OpKind::Pread64,
            FileOp::Write { .. } => OpKind::Write,
            FileOp::Pwrite64 { .. } => OpKind::Pwrite64,
            FileOp::Lseek { .. } => OpKind::Lseek,
            FileOp::Truncate { .. } => OpKind::Truncate,
            FileOp::Ftruncate { .. } => OpKind::Ftruncate,
            FileOp::Fsync { .. } => OpKind::Fsync,
            FileOp::Fdatasync { .. } => OpKind::Fdatasync,
            FileOp::Link { .. } => OpKind::Link,
            FileOp::Symlink { .. } => OpKind::Symlink,
            FileOp::Unlink { .. } => OpKind::Unlink,
            FileOp::Mkdir { .. } => OpKind::Mkdir,
            FileOp::Rmdir { .. } => OpKind::Rmdir,
            FileOp::Rename { .. } => OpKind::Rename,
            FileOp::Stat { .. } => OpKind::Stat,
            FileOp::Lstat { .. } => OpKind::Lstat,
            FileOp::Setxattr { .. } => OpKind::Setxattr,
            FileOp::Getxattr { .. } => OpKind::Getxattr,
            FileOp::Listxattr { .. } => OpKind::Listxattr,
            FileOp::Removexattr { .. } => OpKind::Removexattr,
            FileOp::Utimes { .. } => OpKind::Utimes,
        }
    }

    /// The descriptor slot this op reads, if any.
    pub fn fd(&self) -> Option<u32> {
        match *self {
            FileOp::Close { fd }
            | FileOp::Read { fd, .. }
            | FileOp::Pread64 { fd, .. }
            | FileOp::Write { fd, .. }
            | FileOp::Pwrite64 { fd, .. }
            | FileOp::Lseek { fd, .. }
            | FileOp::Ftruncate { fd, .. }
            | FileOp::Fsync { fd }
            | FileOp::Fdatasync { fd } => Some(fd),
            _ => None,
        }
    }

    /// Path arguments in argument order.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            FileOp::Open { path, .. }
            | FileOp::Truncate { path, .. }
            | FileOp::Unlink { path }
            | FileOp::Mkdir { path, .. }
            | FileOp::Rmdir { path }
            | FileOp::Stat { path }
            | FileOp::Lstat { path }
            | FileOp::Setxattr { path, .. }
            | FileOp::Getxattr { path, .. }
            | FileOp::Listxattr { path, .. }
            | FileOp::Removexattr { path, .. }
            | FileOp::Utimes { path } => vec![path],
            FileOp::Link { old, new } | FileOp::Rename { old, new } => vec![old, new],
            FileOp::Symlink { target, link } => vec![target, link],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct OpProgram {
    pub ops: Vec<FileOp>,
}

impl OpProgram {
    pub fn new(ops: Vec<FileOp>) -> Self {
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

impl fmt::Display for OpProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_program(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    File,
    Dir,
    Symlink,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::File => "file",
            EntryKind::Dir => "dir",
            EntryKind::Symlink => "symlink",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub kind: EntryKind,
    pub open_fds: BTreeSet<u32>,
    pub xattrs: BTreeSet<String>,
}

impl Entry {
    pub fn new(kind: EntryKind) -> Self {
        Self {
            kind,
            open_fds: BTreeSet::new(),
            xattrs: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("`{0}` is not a normalized absolute path")]
    BadPath(String),
    #[error("`{0}` does not exist")]
    Missing(String),
    #[error("`{0}` already exists")]
    Exists(String),
    #[error("`{path}` is a {found}, op needs {wanted}")]
    WrongKind {
        path: String,
        found: &'static str,
        wanted: &'static str,
    },
    #[error("fd ${0} is not open")]
    BadFd(u32),
    #[error("fd ${fd} refers to a {found}, op needs a file")]
    FdKind { fd: u32, found: &'static str },
    #[error("open binds ${found}, expected ${expected}")]
    Slot { found: u32, expected: u32 },
    #[error("`{0}` has open descriptors")]
    Busy(String),
    #[error("directory `{0}` is not empty")]
    NotEmpty(String),
    #[error("xattr `{name}` on `{path}`: {why}")]
    Xattr {
        path: String,
        name: String,
        why: &'static str,
    },
    #[error("argument out of range: {0}")]
    Range(String),
}

/// The status file: what exists, which slots are open on it, which xattrs
/// it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsStatus {
    pub entries: BTreeMap<String, Entry>,
    pub next_slot: u32,
}

impl Default for FsStatus {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("/".to_string(), Entry::new(EntryKind::Dir));
        Self {
            entries,
            next_slot: 0,
        }
    }
}

pub fn is_valid_path(path: &str) -> bool {
    if path == "/" {
        return true;
    }
    path.starts_with('/')
        && !path.ends_with('/')
        && path[1..].split('/').all(|c| {
            !c.is_empty()
                && c != "."
                && c != ".."
                && c.len() <= 255
                && !c.contains(char::is_whitespace)
        })
}

pub fn parent_of(path: &str) -> &str {
    match path.rfind('/') {
        Some(0) | None => "/",
        Some(i) => &path[..i],
    }
}

pub fn join(dir: &str, name: &str) -> String {
    if dir == "/" {
        format!("/{name}")
    } else {
        format!("{dir}/{name}")
    }
}

fn is_under(path: &str, dir: &str) -> bool {
    dir == "/"
        || path
            .strip_prefix(dir)
            .is_some_and(|rest| rest.starts_with('/'))
}

impl FsStatus {
    pub fn get(&self, path: &str) -> Option<&Entry> {
        self.entries.get(path)
    }

    pub fn insert(&mut self, path: &str, kind: EntryKind) {
        self.entries.insert(path.to_string(), Entry::new(kind));
    }

    pub fn paths_of(&self, kind: EntryKind) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, e)| e.kind == kind)
            .map(|(p, _)| p.as_str())
    }

    /// Open slots with the entry they refer to.
    pub fn open_fds(&self) -> impl Iterator<Item = (u32, &str, EntryKind)> {
        self.entries
            .iter()
            .flat_map(|(p, e)| e.open_fds.iter().map(move |&fd| (fd, p.as_str(), e.kind)))
    }

    pub fn fd_entry(&self, fd: u32) -> Option<(&str, &Entry)> {
        self.entries
            .iter()
            .find(|(_, e)| e.open_fds.contains(&fd))
            .map(|(p, e)| (p.as_str(), e))
    }

    pub fn children<'a>(&'a self, dir: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .keys()
            .filter(move |p| p.as_str() != "/" && parent_of(p) == dir)
            .map(String::as_str)
    }

    fn path(&self, path: &str) -> Result<(), ModelError> {
        if is_valid_path(path) {
            Ok(())
        } else {
            Err(ModelError::BadPath(path.into()))
        }
    }

    fn existing(
        &self,
        path: &str,
        allowed: &[EntryKind],
        wanted: &'static str,
    ) -> Result<&Entry, ModelError> {
        self.path(path)?;
        let e = self
            .entries
            .get(path)
            .ok_or_else(|| ModelError::Missing(path.into()))?;
        if !allowed.contains(&e.kind) {
            return Err(ModelError::WrongKind {
                path: path.into(),
                found: e.kind.as_str(),
                wanted,
            });
        }
        Ok(e)
    }

    fn creatable(&self, path: &str) -> Result<(), ModelError> {
        self.path(path)?;
        if path == "/" || self.entries.contains_key(path) {
            return Err(ModelError::Exists(path.into()));
        }
        self.existing(parent_of(path), &[EntryKind::Dir], "dir")
            .map(|_| ())
    }

    fn fd(&self, fd: u32, kind: FdKind) -> Result<(), ModelError> {
        let (_, e) = self.fd_entry(fd).ok_or(ModelError::BadFd(fd))?;
        if kind == FdKind::File && e.kind != EntryKind::File {
            return Err(ModelError::FdKind {
                fd,
                found: e.kind.as_str(),
            });
        }
        Ok(())
    }

    fn count(&self, count: u32) -> Result<(), ModelError> {
        if count > MAX_COUNT {
            return Err(ModelError::Range(format!("count {count} > {MAX_COUNT}")));
        }
        Ok(())
    }

    /// Checks `op` against the model and applies its side effects.
    pub fn apply(&mut self, op: &FileOp) -> Result<(), ModelError> {
        use EntryKind::{Dir, File, Symlink};
        if let Some(kind) = op.kind().fd_kind() {
            self.fd(op.fd().expect("fd ops carry an fd"), kind)?;
        }
        match op {
            FileOp::Open { path, flags, slot } => {
                if *slot != self.next_slot {
                    return Err(ModelError::Slot {
                        found: *slot,
                        expected: self.next_slot,
                    });
                }
                if flags.access() == 0o3 {
                    return Err(ModelError::Range(format!("open flags {:#o}", flags.0)));
                }
                match self.entries.get(path.as_str()) {
                    Some(e) => {
                        self.path(path)?;
                        let dir_only = flags.contains(OpenFlags::DIRECTORY);
                        let ok = match e.kind {
                            File => {
                                !dir_only && !flags.contains(OpenFlags::CREAT | OpenFlags::EXCL)
                            }
                            Dir => {
                                flags.access() == 0
                                    && !flags.contains(OpenFlags::TRUNC)
                                    && !flags.contains(OpenFlags::CREAT | OpenFlags::EXCL)
                            }
                            Symlink => false,
                        };
                        if !ok {
                            return Err(ModelError::WrongKind {
                                path: path.clone(),
                                found: e.kind.as_str(),
                                wanted: "an entry these flags can open",
                            });
                        }
                    }
                    None => {
                        if !flags.contains(OpenFlags::CREAT) || flags.contains(OpenFlags::DIRECTORY)
                        {
                            return Err(ModelError::Missing(path.clone()));
                        }
                        self.creatable(path)?;
                        self.insert(path, File);
                    }
                }
                self.entries
                    .get_mut(path.as_str())
                    .expect("present")
                    .open_fds
                    .insert(*slot);
                self.next_slot += 1;
            }
            FileOp::Close { fd } => {
                let path = self.fd_entry(*fd).expect("checked").0.to_string();
                self.entries
                    .get_mut(&path)
                    .expect("present")
                    .open_fds
                    .remove(fd);
            }
            FileOp::Read { count, .. }
            | FileOp::Write { count, .. }
            | FileOp::Pread64 { count, .. }
            | FileOp::Pwrite64 { count, .. } => self.count(*count)?,
            FileOp::Lseek { whence, .. } => {
                if *whence > 2 {
                    return Err(ModelError::Range(format!("whence {whence}")));
                }
            }
            FileOp::Ftruncate { .. } | FileOp::Fsync { .. } | FileOp::Fdatasync { .. } => {}
            FileOp::Truncate { path, .. } => {
                self.existing(path, &[File], "file")?;
            }
            FileOp::Link { old, new } => {
                let xattrs = self.existing(old, &[File], "file")?.xattrs.clone();
                self.creatable(new)?;
                self.insert(new, File);
                self.entries.get_mut(new.as_str()).expect("inserted").xattrs = xattrs;
            }
            FileOp::Symlink { target, link } => {
                self.path(target)?;
                self.creatable(link)?;
                self.insert(link, Symlink);
            }
            FileOp::Unlink { path } => {
                if !self
                    .existing(path, &[File, Symlink], "file or symlink")?
                    .open_fds
                    .is_empty()
                {
                    return Err(ModelError::Busy(path.clone()));
                }
                self.entries.remove(path.as_str());
            }
            FileOp::Mkdir { path, .. } => {
                self.creatable(path)?;
                self.insert(path, Dir);
            }
            FileOp::Rmdir { path } => {
                if path == "/" {
                    return Err(ModelError::Busy(path.clone()));
                }
                if !self.existing(path, &[Dir], "dir")?.open_fds.is_empty() {
                    return Err(ModelError::Busy(path.clone()));
                }
                if self.children(path).next().is_some() {
                    return Err(ModelError::NotEmpty(path.clone()));
                }
                self.entries.remove(path.as_str());
            }
            FileOp::Rename { old, new } => {
                if old == "/" {
                    return Err(ModelError::Busy(old.clone()));
                }
                self.existing(old, &[File, Dir, Symlink], "entry")?;
                self.creatable(new)?;
                if is_under(new, old) {
                    return Err(ModelError::BadPath(new.clone()));
                }
                let moved: Vec<String> = self
                    .entries
                    .keys()
                    .filter(|p| *p == old || is_under(p, old))
                    .cloned()
                    .collect();
                for p in moved {
                    let e = self.entries.remove(&p).expect("listed");
                    let renamed = format!("{new}{}", &p[old.len()..]);
                    self.entries.insert(renamed, e);
                }
            }
            FileOp::Stat { path } | FileOp::Lstat { path } | FileOp::Utimes { path } => {
                self.existing(path, &[File, Dir, Symlink], "entry")?;
            }
            FileOp::Listxattr { path, size } => {
                self.existing(path, &[File, Dir, Symlink], "entry")?;
                self.count(*size)?;
            }
            FileOp::Setxattr {
                path,
                name,
                value,
                flags,
            } => {
                let present = self
                    .existing(path, &[File, Dir], "file or dir")?
                    .xattrs
                    .contains(name);
                let why = if name.is_empty() || name.len() > 255 || name.contains([',', ' ', '\n'])
                {
                    Some("bad name")
                } else if value.len() > MAX_COUNT as usize {
                    Some("value too large")
                } else {
                    match *flags {
                        0 => None,
                        XATTR_CREATE if present => Some("exists"),
                        XATTR_REPLACE if !present => Some("absent"),
                        XATTR_CREATE | XATTR_REPLACE => None,
                        _ => Some("bad flags"),
                    }
                };
                if let Some(why) = why {
                    return Err(ModelError::Xattr {
                        path: path.clone(),
                        name: name.clone(),
                        why,
                    });
                }
                self.entries
                    .get_mut(path.as_str())
                    .expect("present")
                    .xattrs
                    .insert(name.clone());
            }
            FileOp::Getxattr { path, name, size } => {
                self.count(*size)?;
                if !self
                    .existing(path, &[File, Dir], "file or dir")?
                    .xattrs
                    .contains(name)
                {
                    return Err(ModelError::Xattr {
                        path: path.clone(),
                        name: name.clone(),
                        why: "absent",
                    });
                }
            }
            FileOp::Removexattr { path, name } => {
                let e = self.existing(path, &[File, Dir], "file or dir")?;
                if !e.xattrs.contains(name) {
                    return Err(ModelError::Xattr {
                        path: path.clone(),
                        name: name.clone(),
                        why: "absent",
                    });
                }
                self.entries
                    .get_mut(path.as_str())
                    .expect("present")
                    .xattrs
                    .remove(name);
            }
        }
        Ok(())
    }

    /// Status text: one `kind path [fd=N,...] [xattr=name,...]` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, e) in &self.entries {
            out.push_str(e.kind.as_str());
            out.push(' ');
            out.push_str(path);
            if !e.open_fds.is_empty() {
                let fds: Vec<String> = e.open_fds.iter().map(u32::to_string).collect();
                out.push_str(&format!(" fd={}", fds.join(",")));
            }
            if !e.xattrs.is_empty() {
                let names: Vec<&str> = e.xattrs.iter().map(String::as_str).collect();
                out.push_str(&format!(" xattr={}", names.join(",")));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut entries = BTreeMap::new();
        let mut next_slot = 0;
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| ParseError { line: i + 1, msg };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let kind = match words.next() {
                Some("file") => EntryKind::File,
                Some("dir") => EntryKind::Dir,
                Some("symlink") => EntryKind::Symlink,
                other => return Err(err(format!("unknown entry kind {other:?}"))),
            };
            let path = words.next().ok_or_else(|| err("missing path".into()))?;
            if !is_valid_path(path) {
                return Err(err(format!("bad path `{path}`")));
            }
            let mut entry = Entry::new(kind);
            for word in words {
                if let Some(fds) = word.strip_prefix("fd=") {
                    for fd in fds.split(',') {
                        let fd: u32 = fd.parse().map_err(|_| err(format!("bad fd `{fd}`")))?;
                        next_slot = next_slot.max(fd + 1);
                        entry.open_fds.insert(fd);
                    }
                } else if let Some(names) = word.strip_prefix("xattr=") {
                    entry.xattrs.extend(names.split(',').map(String::from));
                } else {
                    return Err(err(format!("unexpected `{word}`")));
                }
            }
            entries.insert(path.to_string(), entry);
        }
        if entries.get("/").map(|e| e.kind) != Some(EntryKind::Dir) {
            return Err(ParseError {
                line: 0,
                msg: "status lacks the root directory".into(),
            });
        }
        Ok(Self { entries, next_slot })
    }
}

/// Functional form of [`FsStatus::apply`].
pub fn apply_effect(s: &FsStatus, op: &FileOp) -> Result<FsStatus, ModelError> {
    let mut next = s.clone();
    next.apply(op)?;
    Ok(next)
}

/// Replays `p` over `s`, returning the final status or the first failing op.
pub fn replay(p: &OpProgram, s: &FsStatus) -> Result<FsStatus, (usize, ModelError)> {
    let mut st = s.clone();
    for (i, op) in p.ops.iter().enumerate() {
        st.apply(op).map_err(|e| (i, e))?;
    }
    Ok(st)
}

/// The setxattr-driven program from the attribute-list overflow report,
/// written against [`crate::forge::ForgeSpec::trigger_fixture`]'s tree.
pub fn attr_list_trigger() -> OpProgram {
    let value = |n: usize| (0..n).map(|i| (i * 7 + 1) as u8).collect::<Vec<u8>>();
    let p = |s: &str| s.to_string();
    OpProgram::new(vec![
        FileOp::Open {
            path: p("/b"),
            flags: OpenFlags::RDWR,
            slot: 0,
        },
        FileOp::Read { fd: 0, count: 5195 },
        FileOp::Unlink { path: p("/c") },
        FileOp::Truncate {
            path: p("/e"),
            len: 4367,
        },
        FileOp::Unlink { path: p("/f") },
        FileOp::Symlink {
            target: p("/a"),
            link: p("/s"),
        },
        FileOp::Lstat { path: p("/a") },
        FileOp::Setxattr {
            path: p("/a"),
            name: p("user.x"),
            value: value(127),
            flags: XATTR_CREATE,
        },
        FileOp::Pread64 {
            fd: 0,
            count: 6806,
            offset: 299,
        },
        FileOp::Listxattr {
            path: p("/s"),
            size: 5210,
        },
        FileOp::Removexattr {
            path: p("/h"),
            name: p("user.old"),
        },
        FileOp::Removexattr {
            path: p("/a"),
            name: p("user.x"),
        },
        FileOp::Open {
            path: p("/h"),
            flags: OpenFlags::RDWR,
            slot: 1,
        },
        FileOp::Listxattr {
            path: p("/d"),
            size: 5836,
        },
        FileOp::Utimes { path: p("/d") },
        FileOp::Setxattr {
            path: p("/a"),
            name: p("user.y"),
            value: value(11),
            flags: XATTR_CREATE,
        },
        FileOp::Lstat { path: p("/a") },
        FileOp::Pwrite64 {
            fd: 0,
            count: 1772,
            offset: 434,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> FsStatus {
        let mut s = FsStatus::default();
        for f in ["/a", "/b", "/c", "/e", "/f", "/h"] {
            s.insert(f, EntryKind::File);
        }
        s.insert("/d", EntryKind::Dir);
        s.entries
            .get_mut("/h")
            .unwrap()
            .xattrs
            .insert("user.old".into());
        s
    }

    #[test]
    fn trigger_program_is_valid_at_every_step() {
        let p = attr_list_trigger();
        assert_eq!(p.len(), 18);
        let mut s = fixture();
        for op in &p.ops {
            s.apply(op).unwrap_or_else(|e| panic!("{op:?}: {e}"));
        }
        assert!(s.get("/c").is_none());
        assert_eq!(s.get("/s").unwrap().kind, EntryKind::Symlink);
        assert_eq!(
            s.get("/a").unwrap().xattrs,
            BTreeSet::from(["user.y".to_string()])
        );
    }

    #[test]
    fn stat_leaves_status_alone() {
        let s = fixture();
        let t = apply_effect(&s, &FileOp::Stat { path: "/a".into() }).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn open_then_close_restores_fds() {
        let s = fixture();
        let mut t = apply_effect(
            &s,
            &FileOp::Open {
                path: "/a".into(),
                flags: OpenFlags::RDWR,
                slot: 0,
            },
        )
        .unwrap();
        assert_eq!(t.fd_entry(0).unwrap().0, "/a");
        t.apply(&FileOp::Close { fd: 0 }).unwrap();
        assert_eq!(t.entries, s.entries);
    }

    #[test]
    fn context_violations_are_rejected() {
        let mut s = fixture();
        assert!(matches!(
            s.apply(&FileOp::Fsync { fd: 7 }),
            Err(ModelError::BadFd(7))
        ));
        assert!(matches!(
            s.apply(&FileOp::Rmdir { path: "/a".into() }),
            Err(ModelError::WrongKind { .. })
        ));
        s.apply(&FileOp::Open {
            path: "/d".into(),
            flags: OpenFlags::DIRECTORY,
            slot: 0,
        })
        .unwrap();
        assert!(matches!(
            s.apply(&FileOp::Fsync { fd: 0 }),
            Err(ModelError::FdKind { .. })
        ));
        s.apply(&FileOp::Lseek {
            fd: 0,
            offset: 0,
            whence: 0,
        })
        .unwrap();
        assert!(matches!(
            s.apply(&FileOp::Rmdir { path: "/d".into() }),
            Err(ModelError::Busy(_))
        ));
    }

    #[test]
    fn mkdir_then_rmdir() {
        let mut s = fixture();
        s.apply(&FileOp::Mkdir {
            path: "/d1".into(),
            mode: 0o755,
        })
        .unwrap();
        s.apply(&FileOp::Rmdir { path: "/d1".into() }).unwrap();
        assert!(s.get("/d1").is_none());
    }

    #[test]
    fn rename_moves_descendants() {
        let mut s = fixture();
        s.apply(&FileOp::Mkdir {
            path: "/d/x".into(),
            mode: 0o755,
        })
        .unwrap();
        s.apply(&FileOp::Rename {
            old: "/d".into(),
            new: "/n".into(),
        })
        .unwrap();
        assert!(s.get("/n/x").is_some());
        assert!(s.get("/d").is_none());
        assert!(s
            .clone()
            .apply(&FileOp::Rename {
                old: "/n".into(),
                new: "/n/x/y".into()
            })
            .is_err());
    }

    #[test]
    fn status_text_round_trip() {
        let mut s = fixture();
        s.apply(&FileOp::Open {
            path: "/a".into(),
            flags: OpenFlags::RDWR,
            slot: 0,
        })
        .unwrap();
        let text = s.to_text();
        assert!(text.contains("file /a fd=0\n"));
        assert!(text.contains("file /h xattr=user.old\n"));
        assert_eq!(FsStatus::from_text(&text).unwrap(), s);
    }

    #[test]
    fn paths() {
        assert!(is_valid_path("/"));
        assert!(is_valid_path("/a/b"));
        for bad in ["", "a", "/a/", "//a", "/a/../b", "/a b"] {
            assert!(!is_valid_path(bad), "{bad}");
        }
        assert_eq!(parent_of("/a"), "/");
        assert_eq!(parent_of("/a/b"), "/a");
        assert_eq!(join("/", "x"), "/x");
    }
}
