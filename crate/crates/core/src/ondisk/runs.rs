//! Non-resident run lists (mapping pairs). Sparse and compressed runs are
//! rejected.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub vcn: u64,
    pub lcn: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("run list truncated at byte {0}")]
    Truncated(usize),
    #[error("run header {header:#04x} at byte {at} has invalid field sizes")]
    Header { header: u8, at: usize },
    #[error("sparse run at byte {0} is not supported")]
    Sparse(usize),
    #[error("zero-length run at byte {0}")]
    ZeroLength(usize),
    #[error("run at byte {0} moves the LCN out of range")]
    Lcn(usize),
}

fn read_le(bytes: &[u8], signed: bool) -> i128 {
    let mut v: i128 = 0;
    for (i, &b) in bytes.iter().enumerate() {
        v |= (b as i128) << (8 * i);
    }
    if signed && !bytes.is_empty() && bytes[bytes.len() - 1] & 0x80 != 0 {
        v -= 1i128 << (8 * bytes.len());
    }
    v
}

pub fn decode_runs(bytes: &[u8]) -> Result<Vec<Run>, RunError> {
    let mut runs = Vec::new();
    let mut pos = 0usize;
    let mut lcn: i128 = 0;
    let mut vcn: u64 = 0;
    loop {
        let header = *bytes.get(pos).ok_or(RunError::Truncated(pos))?;
        if header == 0 {
            return Ok(runs);
        }
        let len_size = (header & 0x0F) as usize;
        let off_size = (header >> 4) as usize;
        if len_size == 0 || len_size > 8 || off_size > 8 {
            return Err(RunError::Header { header, at: pos });
        }
        if off_size == 0 {
            return Err(RunError::Sparse(pos));
        }
        let len_at = pos + 1;
        let off_at = len_at + len_size;
        let next = off_at + off_size;
        if next > bytes.len() {
            return Err(RunError::Truncated(pos));
        }
        let len = read_le(&bytes[len_at..off_at], false) as u64;
        if len == 0 {
            return Err(RunError::ZeroLength(pos));
        }
        lcn += read_le(&bytes[off_at..next], true);
        if lcn < 0 || lcn > u64::MAX as i128 {
            return Err(RunError::Lcn(pos));
        }
        runs.push(Run {
            vcn,
            lcn: lcn as u64,
            len,
        });
        vcn = vcn.checked_add(len).ok_or(RunError::Lcn(pos))?;
        pos = next;
    }
}

fn minimal_le(v: i128, signed: bool) -> Vec<u8> {
    let mut n = 1;
    while n < 8 {
        let fits = if signed {
            let lo = -(1i128 << (8 * n - 1));
            let hi = (1i128 << (8 * n - 1)) - 1;
            (lo..=hi).contains(&v)
        } else {
            v < (1i128 << (8 * n))
        };
        if fits {
            break;
        }
        n += 1;
    }
    (0..n).map(|i| (v >> (8 * i)) as u8).collect()
}

/// Encodes `(lcn, len)` extents as a terminated run list.
pub fn encode_runs(extents: &[(u64, u64)]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut prev: i128 = 0;
    for &(lcn, len) in extents {
        let len_bytes = minimal_le(len as i128, false);
        let off_bytes = minimal_le(lcn as i128 - prev, true);
        out.push(((off_bytes.len() as u8) << 4) | len_bytes.len() as u8);
        out.extend_from_slice(&len_bytes);
        out.extend_from_slice(&off_bytes);
        prev = lcn as i128;
    }
    out.push(0);
    out
}

/// Maps `[vbo, vbo + len)` of a non-resident stream to an image offset when
/// the range lies inside one run and inside the image.
pub fn map_extent(
    runs: &[Run],
    cluster_size: u32,
    vbo: u64,
    len: u64,
    image_len: usize,
) -> Option<u64> {
    let cs = cluster_size as u64;
    let vcn = vbo / cs;
    let run = runs.iter().find(|r| r.vcn <= vcn && vcn - r.vcn < r.len)?;
    let run_end = run.vcn.checked_add(run.len)?.checked_mul(cs)?;
    if vbo.checked_add(len)? > run_end {
        return None;
    }
    let off = run.lcn.checked_mul(cs)?.checked_add(vbo - run.vcn * cs)?;
    (off.checked_add(len)? <= image_len as u64).then_some(off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_run() {
        let bytes = encode_runs(&[(16, 4)]);
        assert_eq!(bytes, vec![0x11, 0x04, 0x10, 0x00]);
        assert_eq!(
            decode_runs(&bytes).unwrap(),
            vec![Run {
                vcn: 0,
                lcn: 16,
                len: 4
            }]
        );
    }

    #[test]
    fn backwards_offset_is_signed() {
        let bytes = encode_runs(&[(0x200, 1), (0x100, 2)]);
        let runs = decode_runs(&bytes).unwrap();
        assert_eq!(runs[1].lcn, 0x100);
        assert_eq!(runs[1].vcn, 1);
    }

    #[test]
    fn malformed_lists() {
        assert_eq!(decode_runs(&[]), Err(RunError::Truncated(0)));
        assert_eq!(decode_runs(&[0x21, 0x01]), Err(RunError::Truncated(0)));
        assert_eq!(decode_runs(&[0x01, 0x04, 0x00]), Err(RunError::Sparse(0)));
        assert_eq!(
            decode_runs(&[0x10, 0x00]),
            Err(RunError::Header {
                header: 0x10,
                at: 0
            })
        );
        assert_eq!(
            decode_runs(&[0x11, 0x00, 0x01, 0x00]),
            Err(RunError::ZeroLength(0))
        );
        assert_eq!(
            decode_runs(&[0x11, 0x01, 0xFF, 0x00]),
            Err(RunError::Lcn(0))
        );
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(extents in proptest::collection::vec((0u64..1 << 40, 1u64..1 << 20), 1..8)) {
            let runs = decode_runs(&encode_runs(&extents)).unwrap();
            let back: Vec<_> = runs.iter().map(|r| (r.lcn, r.len)).collect();
            prop_assert_eq!(back, extents);
        }
    }

    #[test]
    fn extent_mapping() {
        let runs = [
            Run {
                vcn: 0,
                lcn: 10,
                len: 2,
            },
            Run {
                vcn: 2,
                lcn: 40,
                len: 1,
            },
        ];
        assert_eq!(map_extent(&runs, 4096, 0, 1024, 1 << 20), Some(40960));
        assert_eq!(
            map_extent(&runs, 4096, 8192, 4096, 1 << 20),
            Some(40 * 4096)
        );
        // straddles two runs
        assert_eq!(map_extent(&runs, 4096, 7168, 2048, 1 << 20), None);
        assert_eq!(map_extent(&runs, 4096, 3 * 4096, 1, 1 << 20), None);
        assert_eq!(map_extent(&runs, 4096, 8192, 4096, 40 * 4096), None);
    }
}
