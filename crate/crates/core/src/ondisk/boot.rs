use super::{DecodeError, SECTOR_SIZE};
use crate::reader::{get_u16, get_u64, put_u16, put_u64};

pub const OEM_NTFS: [u8; 8] = *b"NTFS    ";
pub const BOOT_SIGNATURE: u16 = 0xAA55;

pub(crate) const OFF_JUMP: usize = 0x00;
pub(crate) const OFF_OEM: usize = 0x03;
pub(crate) const OFF_BYTES_PER_SECTOR: usize = 0x0B;
pub(crate) const OFF_SECTORS_PER_CLUSTER: usize = 0x0D;
pub(crate) const OFF_TOTAL_SECTORS: usize = 0x28;
pub(crate) const OFF_MFT_CLUSTER: usize = 0x30;
pub(crate) const OFF_MFT_MIRROR_CLUSTER: usize = 0x38;
pub const OFF_RECORD_SIZE: usize = 0x40;
pub const OFF_INDEX_SIZE: usize = 0x44;
pub(crate) const OFF_SERIAL: usize = 0x48;
pub(crate) const OFF_END_MARKER: usize = 0x1FE;

/// Decoded partition boot sector fields. Bytes the struct does not model
/// (BPB leftovers, bootstrap code) live in the template passed to
/// [`PartitionBootSector::encode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionBootSector {
    pub jump: [u8; 3],
    pub oem_id: [u8; 8],
    pub bytes_per_sector: u16,
    /// Encoded: values above 0x80 mean `1 << (256 - v)`.
    pub sectors_per_cluster: u8,
    pub total_sectors: u64,
    pub mft_cluster: u64,
    pub mft_mirror_cluster: u64,
    /// Negative: `1 << -v` bytes. Positive: that many clusters.
    pub record_size_raw: i8,
    pub index_size_raw: i8,
    pub volume_serial: u64,
    pub end_marker: u16,
}

impl PartitionBootSector {
    /// Decodes the fields at their NTFS offsets. No validation.
    pub fn decode(sector: &[u8]) -> Result<Self, DecodeError> {
        if sector.len() != SECTOR_SIZE {
            return Err(DecodeError::BootLength(sector.len()));
        }
        let mut jump = [0u8; 3];
        jump.copy_from_slice(&sector[OFF_JUMP..OFF_JUMP + 3]);
        let mut oem_id = [0u8; 8];
        oem_id.copy_from_slice(&sector[OFF_OEM..OFF_OEM + 8]);
        Ok(Self {
            jump,
            oem_id,
            bytes_per_sector: get_u16(sector, OFF_BYTES_PER_SECTOR),
            sectors_per_cluster: sector[OFF_SECTORS_PER_CLUSTER],
            total_sectors: get_u64(sector, OFF_TOTAL_SECTORS),
            mft_cluster: get_u64(sector, OFF_MFT_CLUSTER),
            mft_mirror_cluster: get_u64(sector, OFF_MFT_MIRROR_CLUSTER),
            record_size_raw: sector[OFF_RECORD_SIZE] as i8,
            index_size_raw: sector[OFF_INDEX_SIZE] as i8,
            volume_serial: get_u64(sector, OFF_SERIAL),
            end_marker: get_u16(sector, OFF_END_MARKER),
        })
    }

    /// Writes the modeled fields over `template`, leaving every other byte as is.
    pub fn encode(&self, template: &[u8; SECTOR_SIZE]) -> [u8; SECTOR_SIZE] {
        let mut out = *template;
        out[OFF_JUMP..OFF_JUMP + 3].copy_from_slice(&self.jump);
        out[OFF_OEM..OFF_OEM + 8].copy_from_slice(&self.oem_id);
        put_u16(&mut out, OFF_BYTES_PER_SECTOR, self.bytes_per_sector);
        out[OFF_SECTORS_PER_CLUSTER] = self.sectors_per_cluster;
        put_u64(&mut out, OFF_TOTAL_SECTORS, self.total_sectors);
        put_u64(&mut out, OFF_MFT_CLUSTER, self.mft_cluster);
        put_u64(&mut out, OFF_MFT_MIRROR_CLUSTER, self.mft_mirror_cluster);
        out[OFF_RECORD_SIZE] = self.record_size_raw as u8;
        out[OFF_INDEX_SIZE] = self.index_size_raw as u8;
        put_u64(&mut out, OFF_SERIAL, self.volume_serial);
        put_u16(&mut out, OFF_END_MARKER, self.end_marker);
        out
    }

    pub fn sectors_per_cluster_decoded(&self) -> u32 {
        let raw = self.sectors_per_cluster;
        if raw > 0x80 {
            1u32.wrapping_shl(256 - raw as u32)
        } else {
            raw as u32
        }
    }

    /// Cluster size in bytes, or `None` when it is zero or not a power of two.
    pub fn cluster_size(&self) -> Option<u32> {
        let size =
            (self.bytes_per_sector as u32).checked_mul(self.sectors_per_cluster_decoded())?;
        (size != 0 && size.is_power_of_two()).then_some(size)
    }

    pub fn cluster_bits(&self) -> Option<u32> {
        self.cluster_size().map(u32::trailing_zeros)
    }

    pub fn record_size_bytes(&self, cluster_bits: u32) -> u32 {
        record_size_bytes(self.record_size_raw, cluster_bits)
    }

    pub fn index_size_bytes(&self, cluster_bits: u32) -> u32 {
        record_size_bytes(self.index_size_raw, cluster_bits)
    }
}

/// Decodes a record/index size byte exactly as the kernel expression does:
/// `raw < 0 ? 1 << -raw : (u32)raw << cluster_bits`, with 32-bit wrapping.
pub fn record_size_bytes(raw: i8, cluster_bits: u32) -> u32 {
    if raw < 0 {
        // -raw as int: -(-128) is 128, not an i8 overflow
        let shift = -(raw as i32) as u32;
        1u32.wrapping_shl(shift)
    } else {
        (raw as u32).wrapping_shl(cluster_bits)
    }
}

/// Inverse of [`record_size_bytes`] for the encodings NTFS formatters emit.
pub fn encode_size_raw(bytes: u32, cluster_size: u32) -> Option<i8> {
    if !bytes.is_power_of_two() || !cluster_size.is_power_of_two() {
        return None;
    }
    if bytes >= cluster_size {
        i8::try_from(bytes / cluster_size).ok()
    } else {
        Some(-(bytes.trailing_zeros() as i8))
    }
}

/// The kernel's `blksize_bits`, verbatim including its do-while shape.
/// Only meaningful for `size > 256`; smaller inputs floor at 9.
pub fn blksize_bits(size: u32) -> u32 {
    let mut size = size;
    let mut bits = 8;
    loop {
        bits += 1;
        size >>= 1;
        if size <= 256 {
            break;
        }
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PartitionBootSector {
        PartitionBootSector {
            jump: [0xEB, 0x52, 0x90],
            oem_id: OEM_NTFS,
            bytes_per_sector: 512,
            sectors_per_cluster: 8,
            total_sectors: 8191,
            mft_cluster: 4,
            mft_mirror_cluster: 20,
            record_size_raw: -10,
            index_size_raw: 1,
            volume_serial: 0x1122_3344_5566_7788,
            end_marker: BOOT_SIGNATURE,
        }
    }

    #[test]
    fn oem_bytes_decode() {
        let mut sector = [0u8; SECTOR_SIZE];
        sector[3..11].copy_from_slice(b"NTFS    ");
        let boot = PartitionBootSector::decode(&sector).unwrap();
        assert_eq!(&boot.oem_id, b"NTFS    ");
    }

    #[test]
    fn zero_sector_decodes_to_zero_fields() {
        let boot = PartitionBootSector::decode(&[0u8; SECTOR_SIZE]).unwrap();
        assert_eq!(boot.end_marker, 0);
        assert_eq!(boot.bytes_per_sector, 0);
        assert_eq!(boot.record_size_raw, 0);
        assert_eq!(boot.cluster_size(), None);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(matches!(
            PartitionBootSector::decode(&[0u8; 511]),
            Err(DecodeError::BootLength(511))
        ));
    }

    #[test]
    fn end_marker_bytes() {
        let out = sample().encode(&[0u8; SECTOR_SIZE]);
        assert_eq!(&out[510..512], &[0x55, 0xAA]);
    }

    #[test]
    fn negative_record_size_is_twos_complement() {
        let out = sample().encode(&[0u8; SECTOR_SIZE]);
        assert_eq!(out[OFF_RECORD_SIZE], 0xF6);
    }

    #[test]
    fn template_bytes_survive_encode() {
        let mut template = [0u8; SECTOR_SIZE];
        template[0x54..0x1FE].fill(0xCC);
        let out = sample().encode(&template);
        assert!(out[0x54..0x1FE].iter().all(|&b| b == 0xCC));
        assert_eq!(PartitionBootSector::decode(&out).unwrap(), sample());
    }

    #[test]
    fn record_size_decoding() {
        assert_eq!(record_size_bytes(-10, 12), 1024);
        assert_eq!(record_size_bytes(1, 12), 4096);
        assert_eq!(record_size_bytes(-2, 12), 4);
        assert_eq!(record_size_bytes(0, 12), 0);
        // x86 masks shift counts, so 1 << 128 behaves as 1 << 0
        assert_eq!(record_size_bytes(-128, 12), 1);
    }

    #[test]
    fn size_raw_encoding_inverts_decoding() {
        assert_eq!(encode_size_raw(1024, 4096), Some(-10));
        assert_eq!(encode_size_raw(4096, 4096), Some(1));
        assert_eq!(encode_size_raw(8192, 4096), Some(2));
        assert_eq!(encode_size_raw(3000, 4096), None);
    }

    #[test]
    fn blksize_bits_loop_trace() {
        assert_eq!(blksize_bits(512), 9);
        assert_eq!(blksize_bits(4096), 12);
        // below the documented precondition the loop still runs once
        assert_eq!(blksize_bits(4), 9);
        assert_eq!(blksize_bits(0), 9);
        assert_eq!(blksize_bits(256), 9);
    }

    #[test]
    fn cluster_size_from_encoded_spc() {
        let mut b = sample();
        assert_eq!(b.cluster_size(), Some(4096));
        b.sectors_per_cluster = 0xF4; // 1 << 12 sectors
        assert_eq!(b.sectors_per_cluster_decoded(), 4096);
        assert_eq!(b.cluster_size(), Some(512 * 4096));
        b.sectors_per_cluster = 3;
        assert_eq!(b.cluster_size(), None);
    }
}
