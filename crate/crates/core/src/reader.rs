//! Bounds-tracking little-endian byte reader.
//!
//! Every read that takes an offset from on-disk data goes through
//! [`ByteReader`]. A read that would touch a byte at or past the reader's
//! limit fails with [`BoundsFault`] instead of panicking, and the highest
//! byte index ever touched is recorded so tests can assert that a parser
//! stayed inside the region it was given.

use std::cell::Cell;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundsFault {
    pub offset: u64,
    pub len: u64,
    pub limit: u64,
}

impl fmt::Display for BoundsFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "read of {} bytes at {:#x} crosses limit {:#x}",
            self.len, self.offset, self.limit
        )
    }
}

impl std::error::Error for BoundsFault {}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    limit: usize,
    // one past the highest byte index read so far
    high_water: Cell<usize>,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self::with_limit(buf, buf.len())
    }

    /// Reader that refuses to touch bytes at or beyond `limit`. The limit is
    /// clamped to the buffer length.
    pub fn with_limit(buf: &'a [u8], limit: usize) -> Self {
        Self {
            buf,
            limit: limit.min(buf.len()),
            high_water: Cell::new(0),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn high_water(&self) -> usize {
        self.high_water.get()
    }

    pub fn bytes(&self, offset: u64, len: u64) -> Result<&'a [u8], BoundsFault> {
        let fault = BoundsFault {
            offset,
            len,
            limit: self.limit as u64,
        };
        let end = offset.checked_add(len).ok_or(fault)?;
        if end > self.limit as u64 {
            return Err(fault);
        }
        let (start, end) = (offset as usize, end as usize);
        if end > self.high_water.get() {
            self.high_water.set(end);
        }
        Ok(&self.buf[start..end])
    }

    fn array<const N: usize>(&self, offset: u64) -> Result<[u8; N], BoundsFault> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.bytes(offset, N as u64)?);
        Ok(out)
    }

    pub fn u8(&self, offset: u64) -> Result<u8, BoundsFault> {
        Ok(self.array::<1>(offset)?[0])
    }

    pub fn u16(&self, offset: u64) -> Result<u16, BoundsFault> {
        self.array(offset).map(u16::from_le_bytes)
    }

    pub fn u32(&self, offset: u64) -> Result<u32, BoundsFault> {
        self.array(offset).map(u32::from_le_bytes)
    }

    pub fn u64(&self, offset: u64) -> Result<u64, BoundsFault> {
        self.array(offset).map(u64::from_le_bytes)
    }
}

pub(crate) fn put_u16(buf: &mut [u8], offset: usize, v: u16) {
    buf[offset..offset + 2].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(buf: &mut [u8], offset: usize, v: u32) {
    buf[offset..offset + 4].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut [u8], offset: usize, v: u64) {
    buf[offset..offset + 8].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn get_u16(buf: &[u8], offset: usize) -> u16 {
    u16::from_le_bytes([buf[offset], buf[offset + 1]])
}

pub(crate) fn get_u32(buf: &[u8], offset: usize) -> u32 {
    let mut b = [0u8; 4];
    b.copy_from_slice(&buf[offset..offset + 4]);
    u32::from_le_bytes(b)
}

pub(crate) fn get_u64(buf: &[u8], offset: usize) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&buf[offset..offset + 8]);
    u64::from_le_bytes(b)
}
