//! Context-aware program generation and mutation. Every candidate is replayed
//! through the status model before it is returned.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    join, replay, EntryKind, FileOp, FsStatus, OpKind, OpProgram, OpenFlags, MAX_COUNT,
    XATTR_CREATE, XATTR_REPLACE,
};

/// Programs stop growing at this many ops.
pub const GEN_MAX_OPS: usize = 32;

const MUTATE_ATTEMPTS: usize = 8;
const GEN_ATTEMPTS: usize = 32;
const NAME_POOL: &[&str] = &["a", "b", "c", "d", "e", "f", "g", "h", "x", "y", "z"];
const XATTR_POOL: &[&str] = &[
    "user.x", "user.y", "user.z", "user.old", "user.n1", "user.n2", "user.n3",
];

fn weight(kind: OpKind) -> u32 {
    match kind {
        OpKind::Open => 12,
        OpKind::Setxattr => 6,
        OpKind::Read | OpKind::Write => 5,
        OpKind::Pread64 | OpKind::Pwrite64 | OpKind::Mkdir | OpKind::Stat | OpKind::Close => 4,
        OpKind::Truncate
        | OpKind::Ftruncate
        | OpKind::Unlink
        | OpKind::Lstat
        | OpKind::Getxattr
        | OpKind::Listxattr => 3,
        _ => 2,
    }
}

/// 0, 1, a small value, the page boundary, or anything up to `max`.
fn boundary<R: Rng + ?Sized>(rng: &mut R, max: u64) -> u64 {
    let v = match rng.gen_range(0..6) {
        0 => 0,
        1 => 1,
        2 => rng.gen_range(2..64),
        3 => [4095, 4096, 4097][rng.gen_range(0..3)],
        4 => rng.gen_range(0..=8192),
        _ => rng.gen_range(0..=max),
    };
    v.min(max)
}

fn count<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    boundary(rng, MAX_COUNT as u64) as u32
}

fn offset<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    if rng.gen_ratio(1, 16) {
        u32::MAX as u64 + rng.gen_range(0..2)
    } else {
        boundary(rng, 1 << 20)
    }
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, items: &[&'a str]) -> Option<&'a str> {
    items.choose(rng).copied()
}

/// A path that does not exist yet, under an existing directory that is not
/// below `avoid`.
fn fresh_path<R: Rng + ?Sized>(rng: &mut R, st: &FsStatus, avoid: Option<&str>) -> Option<String> {
    let dirs: Vec<&str> = st
        .paths_of(EntryKind::Dir)
        .filter(|d| avoid.is_none_or(|a| *d != a && !d.starts_with(&format!("{a}/"))))
        .collect();
    let dir = pick(rng, &dirs)?;
    for _ in 0..16 {
        let mut name = NAME_POOL.choose(rng).expect("non-empty").to_string();
        if rng.gen_bool(0.5) {
            name.push_str(&rng.gen_range(0..10).to_string());
        }
        let path = join(dir, &name);
        if st.get(&path).is_none() {
            return Some(path);
        }
    }
    Some(join(dir, &format!("n{}", rng.gen::<u32>())))
}

fn xattr_value<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let len = match rng.gen_range(0..5) {
        0 => [0, 1, 11, 127, 255][rng.gen_range(0..5)],
        1 => rng.gen_range(0..64),
        2 => rng.gen_range(0..512),
        3 => rng.gen_range(0..2048),
        _ => boundary(rng, 8192) as usize,
    };
    let mut v = vec![0u8; len];
    rng.fill(v.as_mut_slice());
    v
}

/// Draws context-valid arguments for an op of `kind`, or `None` if the
/// status offers nothing to operate on.
fn gen_args<R: Rng + ?Sized>(kind: OpKind, st: &FsStatus, rng: &mut R) -> Option<FileOp> {
    let entries: Vec<&str> = st.entries.keys().map(String::as_str).collect();
    let files: Vec<&str> = st.paths_of(EntryKind::File).collect();
    let file_fds: Vec<u32> = st
        .open_fds()
        .filter(|(_, _, k)| *k == EntryKind::File)
        .map(|(fd, _, _)| fd)
        .collect();
    let any_fds: Vec<u32> = st.open_fds().map(|(fd, _, _)| fd).collect();
    let file_fd = |rng: &mut R| file_fds.choose(rng).copied();
    let s = |p: &str| p.to_string();
    Some(match kind {
        OpKind::Open => {
            let slot = st.next_slot;
            let dirs: Vec<&str> = st.paths_of(EntryKind::Dir).collect();
            match rng.gen_range(0..4) {
                0 | 1 if !files.is_empty() => {
                    let mut flags = [OpenFlags::RDONLY, OpenFlags::WRONLY, OpenFlags::RDWR]
                        [rng.gen_range(0..3)];
                    if rng.gen_ratio(1, 4) {
                        flags = flags | OpenFlags::TRUNC;
                    }
                    if rng.gen_ratio(1, 4) {
                        flags = flags | OpenFlags::APPEND;
                    }
                    FileOp::Open {
                        path: s(pick(rng, &files)?),
                        flags,
                        slot,
                    }
                }
                2 => FileOp::Open {
                    path: s(pick(rng, &dirs)?),
                    flags: OpenFlags::RDONLY | OpenFlags::DIRECTORY,
                    slot,
                },
                _ => {
                    let mut flags = OpenFlags::RDWR | OpenFlags::CREAT;
                    if rng.gen_bool(0.5) {
                        flags = flags | OpenFlags::EXCL;
                    }
                    FileOp::Open {
                        path: fresh_path(rng, st, None)?,
                        flags,
                        slot,
                    }
                }
            }
        }
        OpKind::Close => FileOp::Close {
            fd: *any_fds.choose(rng)?,
        },
        OpKind::Read => FileOp::Read {
            fd: file_fd(rng)?,
            count: count(rng),
        },
        OpKind::Write => FileOp::Write {
            fd: file_fd(rng)?,
            count: count(rng),
        },
        OpKind::Pread64 => FileOp::Pread64 {
            fd: file_fd(rng)?,
            count: count(rng),
            offset: offset(rng),
        },
        OpKind::Pwrite64 => FileOp::Pwrite64 {
            fd: file_fd(rng)?,
            count: count(rng),
            offset: offset(rng),
        },
        OpKind::Lseek => {
            let off = offset(rng) as i64;
            FileOp::Lseek {
                fd: *any_fds.choose(rng)?,
                offset: if rng.gen_ratio(1, 4) { -off } else { off },
                whence: rng.gen_range(0..3),
            }
        }
        OpKind::Truncate => FileOp::Truncate {
            path: s(pick(rng, &files)?),
            len: offset(rng),
        },
        OpKind::Ftruncate => FileOp::Ftruncate {
            fd: file_fd(rng)?,
            len: offset(rng),
        },
        OpKind::Fsync => FileOp::Fsync { fd: file_fd(rng)? },
        OpKind::Fdatasync => FileOp::Fdatasync { fd: file_fd(rng)? },
        OpKind::Link => FileOp::Link {
            old: s(pick(rng, &files)?),
            new: fresh_path(rng, st, None)?,
        },
        OpKind::Symlink => FileOp::Symlink {
            target: s(pick(rng, &entries)?),
            link: fresh_path(rng, st, None)?,
        },
        OpKind::Unlink => {
            let idle: Vec<&str> = st
                .entries
                .iter()
                .filter(|(_, e)| e.kind != EntryKind::Dir && e.open_fds.is_empty())
                .map(|(p, _)| p.as_str())
                .collect();
            FileOp::Unlink {
                path: s(pick(rng, &idle)?),
            }
        }
        OpKind::Mkdir => FileOp::Mkdir {
            path: fresh_path(rng, st, None)?,
            mode: [0o755, 0o700, 0o777][rng.gen_range(0..3)],
        },
        OpKind::Rmdir => {
            let empty: Vec<&str> = st
                .entries
                .iter()
                .filter(|(p, e)| {
                    e.kind == EntryKind::Dir
                        && *p != "/"
                        && e.open_fds.is_empty()
                        && st.children(p).next().is_none()
                })
                .map(|(p, _)| p.as_str())
                .collect();
            FileOp::Rmdir {
                path: s(pick(rng, &empty)?),
            }
        }
        OpKind::Rename => {
            let movable: Vec<&str> = entries.iter().copied().filter(|p| *p != "/").collect();
            let old = pick(rng, &movable)?;
            FileOp::Rename {
                old: s(old),
                new: fresh_path(rng, st, Some(old))?,
            }
        }
        OpKind::Stat => FileOp::Stat {
            path: s(pick(rng, &entries)?),
        },
        OpKind::Lstat => FileOp::Lstat {
            path: s(pick(rng, &entries)?),
        },
        OpKind::Utimes => FileOp::Utimes {
            path: s(pick(rng, &entries)?),
        },
        OpKind::Listxattr => FileOp::Listxattr {
            path: s(pick(rng, &entries)?),
            size: count(rng),
        },
        OpKind::Setxattr => {
            let targets: Vec<&str> = st
                .entries
                .iter()
                .filter(|(_, e)| e.kind != EntryKind::Symlink)
                .map(|(p, _)| p.as_str())
                .collect();
            let path = pick(rng, &targets)?;
            let name = *XATTR_POOL.choose(rng).expect("non-empty");
            let present = st.get(path).expect("listed").xattrs.contains(name);
            let flags = match (present, rng.gen_bool(0.5)) {
                (_, false) => 0,
                (true, true) => XATTR_REPLACE,
                (false, true) => XATTR_CREATE,
            };
            FileOp::Setxattr {
                path: s(path),
                name: s(name),
                value: xattr_value(rng),
                flags,
            }
        }
        OpKind::Getxattr | OpKind::Removexattr => {
            let tagged: Vec<(&str, Vec<&str>)> = st
                .entries
                .iter()
                .filter(|(_, e)| e.kind != EntryKind::Symlink && !e.xattrs.is_empty())
                .map(|(p, e)| (p.as_str(), e.xattrs.iter().map(String::as_str).collect()))
                .collect();
            let (path, names) = tagged.choose(rng)?;
            let name = s(pick(rng, names)?);
            if kind == OpKind::Getxattr {
                FileOp::Getxattr {
                    path: s(path),
                    name,
                    size: count(rng),
                }
            } else {
                FileOp::Removexattr {
                    path: s(path),
                    name,
                }
            }
        }
    })
}

/// Redraws only the numeric arguments of `op`, keeping its paths and fds.
fn tweak_numbers<R: Rng + ?Sized>(op: &FileOp, rng: &mut R) -> Option<FileOp> {
    let mut op = op.clone();
    match &mut op {
        FileOp::Read { count: c, .. } | FileOp::Write { count: c, .. } => *c = count(rng),
        FileOp::Pread64 {
            count: c,
            offset: o,
            ..
        }
        | FileOp::Pwrite64 {
            count: c,
            offset: o,
            ..
        } => {
            if rng.gen_bool(0.5) {
                *c = count(rng);
            } else {
                *o = offset(rng);
            }
        }
        FileOp::Lseek {
            offset: o, whence, ..
        } => {
            *o = offset(rng) as i64 * if rng.gen_bool(0.25) { -1 } else { 1 };
            *whence = rng.gen_range(0..3);
        }
        FileOp::Truncate { len, .. } | FileOp::Ftruncate { len, .. } => *len = offset(rng),
        FileOp::Getxattr { size, .. } | FileOp::Listxattr { size, .. } => *size = count(rng),
        FileOp::Setxattr { value, .. } => *value = xattr_value(rng),
        _ => return None,
    }
    Some(op)
}

/// Status before each op up to and including the first invalid one, plus
/// that op's index.
fn prefix_states(p: &OpProgram, s: &FsStatus) -> (Vec<FsStatus>, Option<usize>) {
    let mut states = Vec::with_capacity(p.len() + 1);
    let mut st = s.clone();
    for (i, op) in p.ops.iter().enumerate() {
        states.push(st.clone());
        if st.apply(op).is_err() {
            return (states, Some(i));
        }
    }
    states.push(st);
    (states, None)
}

/// Replaces the arguments of exactly one op, keeping its kind, so that the
/// whole program stays valid over `s`. An invalid input has its first
/// invalid op repaired. Falls back to [`generate_op_with`] when no
/// replacement validates.
pub fn mutate_program_with<R: Rng + ?Sized>(p: &OpProgram, s: &FsStatus, rng: &mut R) -> OpProgram {
    if p.is_empty() {
        return generate_op_with(p, s, rng);
    }
    let (states, bad) = prefix_states(p, s);
    for _ in 0..MUTATE_ATTEMPTS {
        let i = bad.unwrap_or_else(|| rng.gen_range(0..p.len()));
        let old = &p.ops[i];
        let new = if bad.is_none() && rng.gen_bool(0.5) {
            tweak_numbers(old, rng)
        } else {
            None
        }
        .or_else(|| gen_args(old.kind(), &states[i], rng));
        let Some(new) = new else { continue };
        if &new == old {
            continue;
        }
        let mut q = p.clone();
        q.ops[i] = new;
        if replay(&q, s).is_ok() {
            return q;
        }
    }
    generate_op_with(p, s, rng)
}

/// Appends one op whose arguments are valid in the status reached by
/// replaying `p` over `s`. An invalid `p` is first cut at its first invalid
/// op.
pub fn generate_op_with<R: Rng + ?Sized>(p: &OpProgram, s: &FsStatus, rng: &mut R) -> OpProgram {
    let (mut states, bad) = prefix_states(p, s);
    let mut q = p.clone();
    if let Some(k) = bad {
        q.ops.truncate(k);
    }
    let st = states.pop().expect("at least the initial status");
    let kinds = OpKind::ALL;
    let dist = WeightedIndex::new(kinds.iter().map(|&k| weight(k))).expect("positive weights");
    for _ in 0..GEN_ATTEMPTS {
        let kind = kinds[dist.sample(rng)];
        if let Some(op) = gen_args(kind, &st, rng) {
            if st.clone().apply(&op).is_ok() {
                q.ops.push(op);
                return q;
            }
        }
    }
    q.ops.push(FileOp::Stat { path: "/".into() });
    q
}

pub fn mutate_program(p: &OpProgram, s: &FsStatus, seed: u64) -> OpProgram {
    mutate_program_with(p, s, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_op(p: &OpProgram, s: &FsStatus, seed: u64) -> OpProgram {
    generate_op_with(p, s, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::attr_list_trigger;

    fn fixture() -> FsStatus {
        let mut s = FsStatus::default();
        s.insert("/a", EntryKind::File);
        s.insert("/d", EntryKind::Dir);
        s
    }

    #[test]
    fn repairs_a_stale_descriptor() {
        let p = OpProgram::new(vec![
            FileOp::Open {
                path: "/a".into(),
                flags: OpenFlags::RDWR,
                slot: 0,
            },
            FileOp::Fsync { fd: 7 },
        ]);
        let q = mutate_program(&p, &fixture(), 1);
        assert_eq!(q.ops[0], p.ops[0]);
        assert_eq!(q.ops[1], FileOp::Fsync { fd: 0 });
    }

    #[test]
    fn generation_grows_valid_programs() {
        let s = fixture();
        let mut p = OpProgram::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=GEN_MAX_OPS {
            p = generate_op_with(&p, &s, &mut rng);
            assert_eq!(p.len(), n);
            replay(&p, &s).unwrap();
        }
    }

    #[test]
    fn mutation_keeps_length_and_one_kind() {
        let mut s = fixture();
        for f in ["/b", "/c", "/e", "/f", "/h"] {
            s.insert(f, EntryKind::File);
        }
        s.entries
            .get_mut("/h")
            .unwrap()
            .xattrs
            .insert("user.old".into());
        let p = attr_list_trigger();
        for seed in 0..64 {
            let q = mutate_program(&p, &s, seed);
            replay(&q, &s).unwrap();
            if q.len() == p.len() {
                let diff: Vec<usize> = (0..p.len()).filter(|&i| p.ops[i] != q.ops[i]).collect();
                assert_eq!(diff.len(), 1, "seed {seed}");
                assert_eq!(p.ops[diff[0]].kind(), q.ops[diff[0]].kind());
            } else {
                assert_eq!(q.len(), p.len() + 1);
            }
        }
    }
}
