//! The `PPRA` corpus file: magic, version, then four length-prefixed
//! sections (extents, metadata, program text, status text).

use super::{Corpus, CorpusError, ExtentKind, MetadataExtent};
use crate::program::{parse_program, serialize_program, FsStatus};

pub const CONTAINER_MAGIC: [u8; 4] = *b"PPRA";
pub const CONTAINER_VERSION: u16 = 1;

/// offset u64, length u32, kind u8
const EXTENT_RECORD: usize = 13;

fn section(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

pub fn write_corpus(c: &Corpus) -> Vec<u8> {
    let mut out = Vec::with_capacity(c.metadata.len() + 64 + c.extents.len() * EXTENT_RECORD);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    let mut ext = Vec::with_capacity(4 + c.extents.len() * EXTENT_RECORD);
    ext.extend_from_slice(&(c.extents.len() as u32).to_le_bytes());
    for e in &c.extents {
        ext.extend_from_slice(&e.image_offset.to_le_bytes());
        ext.extend_from_slice(&e.length.to_le_bytes());
        ext.push(e.kind.code());
    }
    section(&mut out, &ext);
    section(&mut out, &c.metadata);
    section(&mut out, serialize_program(&c.program).as_bytes());
    section(&mut out, c.status.to_text().as_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CorpusError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CorpusError::Container(format!("truncated {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CorpusError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CorpusError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn section(&mut self, what: &str) -> Result<&'a [u8], CorpusError> {
        let len = self.u64(what)?;
        let len = usize::try_from(len)
            .map_err(|_| CorpusError::Container(format!("{what} length {len}")))?;
        self.take(len, what)
    }
}

fn text<'a>(bytes: &'a [u8], what: &str) -> Result<&'a str, CorpusError> {
    std::str::from_utf8(bytes).map_err(|e| CorpusError::Container(format!("{what}: {e}")))
}

pub fn read_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != CONTAINER_MAGIC {
        return Err(CorpusError::Container("bad magic".into()));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(CorpusError::Container(format!(
            "unsupported version {version}"
        )));
    }
    let mut ext = Cursor {
        buf: cur.section("extents")?,
        pos: 0,
    };
    let count = ext.u32("extent count")? as usize;
    if ext.buf.len() != 4 + count * EXTENT_RECORD {
        return Err(CorpusError::Container(format!(
            "extent section of {} bytes for {count} extents",
            ext.buf.len()
        )));
    }
    let mut extents = Vec::with_capacity(count);
    for _ in 0..count {
        let image_offset = ext.u64("extent")?;
        let length = ext.u32("extent")?;
        let code = ext.take(1, "extent")?[0];
        let kind = ExtentKind::from_code(code)
            .ok_or_else(|| CorpusError::Container(format!("extent kind {code}")))?;
        extents.push(MetadataExtent {
            image_offset,
            length,
            kind,
        });
    }
    let metadata = cur.section("metadata")?.to_vec();
    let program = parse_program(text(cur.section("program")?, "program")?)?;
    let status = FsStatus::from_text(text(cur.section("status")?, "status")?)?;
    if cur.pos != bytes.len() {
        return Err(CorpusError::Container(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let c = Corpus {
        metadata,
        extents,
        program,
        status,
    };
    let total: u64 = c.extents.iter().map(|e| e.length as u64).sum();
    if total != c.metadata.len() as u64 {
        return Err(CorpusError::BlobLength {
            extents: total,
            blob: c.metadata.len(),
        });
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::extract_corpus;
    use crate::forge::{build_image, ForgeSpec};
    use crate::program::attr_list_trigger;

    #[test]
    fn container_round_trip() {
        let img = build_image(&ForgeSpec::trigger_fixture()).unwrap();
        let mut c = extract_corpus(&img).unwrap();
        c.program = attr_list_trigger();
        let bytes = write_corpus(&c);
        assert_eq!(&bytes[..4], b"PPRA");
        assert_eq!(read_corpus(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_tampering_are_errors() {
        let img = build_image(&ForgeSpec::default()).unwrap();
        let bytes = write_corpus(&extract_corpus(&img).unwrap());
        for cut in [0, 3, 6, 20, bytes.len() - 1] {
            assert!(read_corpus(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(read_corpus(&bad).is_err());
    }
}
