//! Update sequence arrays.
//!
//! On disk, the last two bytes of every 512-byte stride of a `FILE` or `INDX`
//! structure hold the update sequence number (slot 0 of the array); the bytes
//! they displaced live in slots 1..count.

use thiserror::Error;

use crate::reader::{get_u16, put_u16};

/// Fixup stride. NTFS uses 512 regardless of the volume's sector size.
pub const FIXUP_STRIDE: usize = 512;

pub(crate) const OFF_USA_OFFSET: usize = 0x04;
pub(crate) const OFF_USA_COUNT: usize = 0x06;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UsaError {
    #[error("structure length {0} is not a positive multiple of the fixup stride")]
    Length(usize),
    #[error("usa_count {found} does not match {expected} (1 + sectors)")]
    Count { found: u16, expected: u16 },
    #[error("usa_offset {0:#x} is misaligned or overlaps the first sector tail")]
    Offset(u16),
    #[error("sector {sector} tail {found:#06x} does not match usn {usn:#06x}")]
    Torn { sector: usize, usn: u16, found: u16 },
}

/// Number of update-sequence slots a structure of `len` bytes needs.
pub fn expected_count(len: usize) -> u16 {
    (len / FIXUP_STRIDE + 1) as u16
}

/// Validates the array's placement and returns `(usa_offset, usa_count)`.
pub fn geometry(buf: &[u8]) -> Result<(usize, usize), UsaError> {
    let len = buf.len();
    if len == 0 || !len.is_multiple_of(FIXUP_STRIDE) {
        return Err(UsaError::Length(len));
    }
    let off = get_u16(buf, OFF_USA_OFFSET);
    let count = get_u16(buf, OFF_USA_COUNT);
    let expected = expected_count(len);
    if count != expected {
        return Err(UsaError::Count {
            found: count,
            expected,
        });
    }
    let end = off as usize + 2 * count as usize;
    if !off.is_multiple_of(2) || off < 8 || end > FIXUP_STRIDE - 2 {
        return Err(UsaError::Offset(off));
    }
    Ok((off as usize, count as usize))
}

fn tail(sector: usize) -> usize {
    sector * FIXUP_STRIDE + FIXUP_STRIDE - 2
}

/// Checks that every sector tail carries the usn.
pub fn verify(buf: &[u8]) -> Result<(), UsaError> {
    let (off, _) = geometry(buf)?;
    let usn = get_u16(buf, off);
    for sector in 0..buf.len() / FIXUP_STRIDE {
        let found = get_u16(buf, tail(sector));
        if found != usn {
            return Err(UsaError::Torn { sector, usn, found });
        }
    }
    Ok(())
}

/// On-disk to in-memory: verifies the tails, then puts the saved bytes back.
pub fn restore(buf: &mut [u8]) -> Result<(), UsaError> {
    verify(buf)?;
    let (off, _) = geometry(buf)?;
    for sector in 0..buf.len() / FIXUP_STRIDE {
        let saved = get_u16(buf, off + 2 * (sector + 1));
        put_u16(buf, tail(sector), saved);
    }
    Ok(())
}

/// In-memory to on-disk: saves each tail into its slot and stamps `usn`.
pub fn protect(buf: &mut [u8], usn: u16) -> Result<(), UsaError> {
    let (off, _) = geometry(buf)?;
    put_u16(buf, off, usn);
    for sector in 0..buf.len() / FIXUP_STRIDE {
        let t = tail(sector);
        let displaced = get_u16(buf, t);
        put_u16(buf, off + 2 * (sector + 1), displaced);
        put_u16(buf, t, usn);
    }
    Ok(())
}

/// The usn currently stored in slot 0.
pub fn usn(buf: &[u8]) -> Result<u16, UsaError> {
    let (off, _) = geometry(buf)?;
    Ok(get_u16(buf, off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn structure(len: usize, fill: u8) -> Vec<u8> {
        let mut buf = vec![fill; len];
        buf[..4].copy_from_slice(b"FILE");
        put_u16(&mut buf, OFF_USA_OFFSET, 0x30);
        put_u16(&mut buf, OFF_USA_COUNT, expected_count(len));
        buf
    }

    #[test]
    fn protect_then_restore_is_identity() {
        let mut buf = structure(1024, 0);
        for (i, b) in buf.iter_mut().enumerate().skip(0x40) {
            *b = i as u8;
        }
        let original = buf.clone();
        protect(&mut buf, 7).unwrap();
        assert_eq!(get_u16(&buf, 510), 7);
        assert_eq!(get_u16(&buf, 1022), 7);
        verify(&buf).unwrap();
        restore(&mut buf).unwrap();
        // the array now holds the usn and saved tails; every other byte is back
        assert_eq!(&buf[0x36..], &original[0x36..]);
    }

    #[test]
    fn torn_sector_is_detected() {
        let mut buf = structure(1024, 0);
        protect(&mut buf, 3).unwrap();
        buf[1022] ^= 1;
        assert!(matches!(
            verify(&buf),
            Err(UsaError::Torn { sector: 1, .. })
        ));
        assert!(restore(&mut buf).is_err());
    }

    #[test]
    fn bad_geometry_is_rejected() {
        let mut buf = structure(1024, 0);
        put_u16(&mut buf, OFF_USA_COUNT, 2);
        assert!(matches!(geometry(&buf), Err(UsaError::Count { .. })));
        let mut buf = structure(1024, 0);
        put_u16(&mut buf, OFF_USA_OFFSET, 0x1FD);
        assert!(matches!(geometry(&buf), Err(UsaError::Offset(_))));
        assert!(matches!(geometry(&[0u8; 100]), Err(UsaError::Length(100))));
    }

    proptest! {
        #[test]
        fn fixup_is_an_involution(
            body in proptest::collection::vec(any::<u8>(), 2048),
            usn in any::<u16>(),
        ) {
            let mut disk = body;
            disk[..4].copy_from_slice(b"FILE");
            put_u16(&mut disk, OFF_USA_OFFSET, 0x30);
            put_u16(&mut disk, OFF_USA_COUNT, expected_count(2048));
            protect(&mut disk, usn).unwrap();
            let original = disk.clone();
            restore(&mut disk).unwrap();
            protect(&mut disk, usn).unwrap();
            prop_assert_eq!(disk, original);
        }
    }
}
