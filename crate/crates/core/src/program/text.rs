//! One op per line: `kind(arg, ...)`, with `-> $N` after `open`. Paths and
//! names are double-quoted, descriptors are `$N`, xattr values are `0x` hex.

use std::fmt::Write as _;

use thiserror::Error;

use super::{FileOp, OpKind, OpProgram, OpenFlags};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn flags_text(flags: OpenFlags) -> String {
    let mut parts = vec![match flags.access() {
        0 => "RDONLY".to_string(),
        1 => "WRONLY".to_string(),
        2 => "RDWR".to_string(),
        _ => "ACC3".to_string(),
    }];
    let mut rest = flags.0 & !0o3;
    for (name, f) in OpenFlags::NAMED.iter().filter(|(n, _)| *n != "WRONLY") {
        if rest & f.0 != 0 {
            parts.push(name.to_string());
            rest &= !f.0;
        }
    }
    if rest != 0 {
        parts.push(format!("{rest:#o}"));
    }
    parts.join("|")
}

pub fn serialize_op(op: &FileOp) -> String {
    let args = match op {
        FileOp::Open { path, flags, .. } => format!("{}, {}", quote(path), flags_text(*flags)),
        FileOp::Close { fd } | FileOp::Fsync { fd } | FileOp::Fdatasync { fd } => format!("${fd}"),
        FileOp::Read { fd, count } | FileOp::Write { fd, count } => format!("${fd}, {count}"),
        FileOp::Pread64 { fd, count, offset } | FileOp::Pwrite64 { fd, count, offset } => {
            format!("${fd}, {count}, {offset}")
        }
        FileOp::Lseek { fd, offset, whence } => format!("${fd}, {offset}, {whence}"),
        FileOp::Truncate { path, len } => format!("{}, {len}", quote(path)),
        FileOp::Ftruncate { fd, len } => format!("${fd}, {len}"),
        FileOp::Link { old, new } | FileOp::Rename { old, new } => {
            format!("{}, {}", quote(old), quote(new))
        }
        FileOp::Symlink { target, link } => format!("{}, {}", quote(target), quote(link)),
        FileOp::Mkdir { path, mode } => format!("{}, {mode:#o}", quote(path)),
        FileOp::Unlink { path }
        | FileOp::Rmdir { path }
        | FileOp::Stat { path }
        | FileOp::Lstat { path }
        | FileOp::Utimes { path } => quote(path),
        FileOp::Setxattr {
            path,
            name,
            value,
            flags,
        } => {
            let mut hex = String::with_capacity(2 + 2 * value.len());
            hex.push_str("0x");
            for b in value {
                let _ = write!(hex, "{b:02x}");
            }
            format!("{}, {}, {hex}, {flags}", quote(path), quote(name))
        }
        FileOp::Getxattr { path, name, size } => {
            format!("{}, {}, {size}", quote(path), quote(name))
        }
        FileOp::Listxattr { path, size } => format!("{}, {size}", quote(path)),
        FileOp::Removexattr { path, name } => format!("{}, {}", quote(path), quote(name)),
    };
    match op {
        FileOp::Open { slot, .. } => format!("open({args}) -> ${slot}"),
        _ => format!("{}({args})", op.kind()),
    }
}

pub fn serialize_program(p: &OpProgram) -> String {
    let mut out = String::new();
    for op in &p.ops {
        out.push_str(&serialize_op(op));
        out.push('\n');
    }
    out
}

/// Splits an argument list on top-level commas, leaving quoted strings whole.
fn split_args(s: &str) -> Result<Vec<String>, String> {
    let mut args = Vec::new();
    let mut cur = String::new();
    let mut chars = s.chars();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            '\\' if quoted => {
                let n = chars.next().ok_or("dangling escape")?;
                cur.push('\\');
                cur.push(n);
            }
            ',' if !quoted => args.push(std::mem::take(&mut cur).trim().to_string()),
            c => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated string".into());
    }
    let last = cur.trim().to_string();
    if !last.is_empty() || !args.is_empty() {
        args.push(last);
    }
    Ok(args)
}

fn unquote(s: &str) -> Result<String, String> {
    let inner = s
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .ok_or_else(|| format!("expected a quoted string, got `{s}`"))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(c @ ('"' | '\\')) => out.push(c),
                other => return Err(format!("bad escape {other:?}")),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn fd(s: &str) -> Result<u32, String> {
    s.strip_prefix('$')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| format!("expected `$N`, got `{s}`"))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn mode(s: &str) -> Result<u32, String> {
    let digits = s
        .strip_prefix("0o")
        .ok_or_else(|| format!("expected 0o mode, got `{s}`"))?;
    u32::from_str_radix(digits, 8).map_err(|_| format!("bad mode `{s}`"))
}

fn hex(s: &str) -> Result<Vec<u8>, String> {
    let digits = s
        .strip_prefix("0x")
        .ok_or_else(|| format!("expected 0x value, got `{s}`"))?;
    hex::decode(digits).map_err(|e| format!("bad hex value: {e}"))
}

fn flags(s: &str) -> Result<OpenFlags, String> {
    let mut bits = 0;
    for part in s.split('|').map(str::trim) {
        bits |= match part {
            "RDONLY" => 0,
            "RDWR" => OpenFlags::RDWR.0,
            _ => match OpenFlags::NAMED.iter().find(|(n, _)| *n == part) {
                Some((_, f)) => f.0,
                None if part.starts_with("0o") => mode(part)?,
                None => return Err(format!("unknown open flag `{part}`")),
            },
        };
    }
    Ok(OpenFlags(bits))
}

pub fn parse_op(line: &str) -> Result<FileOp, String> {
    let (call, slot) = match line.split_once("->") {
        Some((call, slot)) => (call.trim(), Some(fd(slot.trim())?)),
        None => (line.trim(), None),
    };
    let open = call.find('(').ok_or("expected `kind(args)`")?;
    let name = &call[..open];
    let body = call[open + 1..].strip_suffix(')').ok_or("missing `)`")?;
    let kind = OpKind::ALL
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| format!("unknown op `{name}`"))?;
    let a = split_args(body)?;
    let want = match kind {
        OpKind::Close | OpKind::Fsync | OpKind::Fdatasync => 1,
        OpKind::Unlink | OpKind::Rmdir | OpKind::Stat | OpKind::Lstat | OpKind::Utimes => 1,
        OpKind::Pread64 | OpKind::Pwrite64 | OpKind::Lseek | OpKind::Getxattr => 3,
        OpKind::Setxattr => 4,
        _ => 2,
    };
    if a.len() != want {
        return Err(format!("{name} takes {want} arguments, got {}", a.len()));
    }
    if slot.is_some() != (kind == OpKind::Open) {
        return Err("only open binds `-> $N`".into());
    }
    Ok(match kind {
        OpKind::Open => FileOp::Open {
            path: unquote(&a[0])?,
            flags: flags(&a[1])?,
            slot: slot.expect("checked"),
        },
        OpKind::Close => FileOp::Close { fd: fd(&a[0])? },
        OpKind::Fsync => FileOp::Fsync { fd: fd(&a[0])? },
        OpKind::Fdatasync => FileOp::Fdatasync { fd: fd(&a[0])? },
        OpKind::Read => FileOp::Read {
            fd: fd(&a[0])?,
            count: num(&a[1])?,
        },
        OpKind::Write => FileOp::Write {
            fd: fd(&a[0])?,
            count: num(&a[1])?,
        },
        OpKind::Pread64 => FileOp::Pread64 {
            fd: fd(&a[0])?,
            count: num(&a[1])?,
            offset: num(&a[2])?,
        },
        OpKind::Pwrite64 => FileOp::Pwrite64 {
            fd: fd(&a[0])?,
            count: num(&a[1])?,
            offset: num(&a[2])?,
        },
        OpKind::Lseek => FileOp::Lseek {
            fd: fd(&a[0])?,
            offset: num(&a[1])?,
            whence: num(&a[2])?,
        },
        OpKind::Truncate => FileOp::Truncate {
            path: unquote(&a[0])?,
            len: num(&a[1])?,
        },
        OpKind::Ftruncate => FileOp::Ftruncate {
            fd: fd(&a[0])?,
            len: num(&a[1])?,
        },
        OpKind::Link => FileOp::Link {
            old: unquote(&a[0])?,
            new: unquote(&a[1])?,
        },
        OpKind::Rename => FileOp::Rename {
            old: unquote(&a[0])?,
            new: unquote(&a[1])?,
        },
        OpKind::Symlink => FileOp::Symlink {
            target: unquote(&a[0])?,
            link: unquote(&a[1])?,
        },
        OpKind::Unlink => FileOp::Unlink {
            path: unquote(&a[0])?,
        },
        OpKind::Mkdir => FileOp::Mkdir {
            path: unquote(&a[0])?,
            mode: mode(&a[1])?,
        },
        OpKind::Rmdir => FileOp::Rmdir {
            path: unquote(&a[0])?,
        },
        OpKind::Stat => FileOp::Stat {
            path: unquote(&a[0])?,
        },
        OpKind::Lstat => FileOp::Lstat {
            path: unquote(&a[0])?,
        },
        OpKind::Utimes => FileOp::Utimes {
            path: unquote(&a[0])?,
        },
        OpKind::Setxattr => FileOp::Setxattr {
            path: unquote(&a[0])?,
            name: unquote(&a[1])?,
            value: hex(&a[2])?,
            flags: num(&a[3])?,
        },
        OpKind::Getxattr => FileOp::Getxattr {
            path: unquote(&a[0])?,
            name: unquote(&a[1])?,
            size: num(&a[2])?,
        },
        OpKind::Listxattr => FileOp::Listxattr {
            path: unquote(&a[0])?,
            size: num(&a[1])?,
        },
        OpKind::Removexattr => FileOp::Removexattr {
            path: unquote(&a[0])?,
            name: unquote(&a[1])?,
        },
    })
}

/// Parses program text. Blank lines and `#` comments are skipped.
pub fn parse_program(text: &str) -> Result<OpProgram, ParseError> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ops.push(parse_op(line).map_err(|msg| ParseError { line: i + 1, msg })?);
    }
    Ok(OpProgram { ops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::attr_list_trigger;

    #[test]
    fn trigger_lines() {
        let text = serialize_program(&attr_list_trigger());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"open("/b", RDWR) -> $0"#);
        assert_eq!(lines[1], "read($0, 5195)");
        assert_eq!(lines[3], r#"truncate("/e", 4367)"#);
        assert_eq!(lines[8], "pread64($0, 6806, 299)");
        assert_eq!(lines[10], r#"removexattr("/h", "user.old")"#);
        assert!(lines[15].starts_with(r#"setxattr("/a", "user.y", 0x01080f"#));
        assert!(lines[15].ends_with(", 1)"));
    }

    #[test]
    fn round_trip_every_kind() {
        let ops = vec![
            FileOp::Open {
                path: "/we\"ird\\".into(),
                flags: OpenFlags::WRONLY | OpenFlags::CREAT | OpenFlags::TRUNC,
                slot: 0,
            },
            FileOp::Open {
                path: "/d".into(),
                flags: OpenFlags::DIRECTORY,
                slot: 1,
            },
            FileOp::Lseek {
                fd: 0,
                offset: -5,
                whence: 2,
            },
            FileOp::Ftruncate { fd: 0, len: 4097 },
            FileOp::Fdatasync { fd: 0 },
            FileOp::Write { fd: 0, count: 1 },
            FileOp::Mkdir {
                path: "/x".into(),
                mode: 0o755,
            },
            FileOp::Link {
                old: "/a".into(),
                new: "/l".into(),
            },
            FileOp::Rename {
                old: "/x".into(),
                new: "/y".into(),
            },
            FileOp::Setxattr {
                path: "/a".into(),
                name: "user.e".into(),
                value: vec![],
                flags: 0,
            },
            FileOp::Getxattr {
                path: "/a".into(),
                name: "user.e".into(),
                size: 0,
            },
            FileOp::Rmdir { path: "/y".into() },
            FileOp::Stat { path: "/".into() },
            FileOp::Close { fd: 1 },
        ];
        let p = OpProgram { ops };
        let text = serialize_program(&p);
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_program("# c\nstat(\"/a\")\nfrob(1)\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(parse_op("close(3)").is_err());
        assert!(parse_op("stat(\"/a\") -> $0").is_err());
        assert!(parse_op("open(\"/a\", RDWR)").is_err());
    }
}
