//! The archive container: a fixed header, the flattened message as
//! little-endian 32-bit words, and a trailing CRC-32 of the payload.
//!
//! Layout:
//!
//! ```text
//! "HLLC"            magic, 4 bytes
//! version           1 byte (currently 1)
//! model id          1 byte
//! precision         1 byte
//! bins log2         1 byte
//! image count       4 bytes LE
//! payload words     8 bytes LE
//! payload           4 * words bytes, LE u32 each
//! crc32(payload)    4 bytes LE
//! ```
//!
//! The decoder rejects bad magic, version, or checksum before any decode.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HLLC";
pub const VERSION: u8 = 1;

/// CRC-32 (ISO 3309, reflected polynomial 0xEDB88320), table driven.
const CRC32_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut j = 0;
        while j < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            j += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
};

pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = (crc >> 8) ^ CRC32_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

/// Parsed container header and payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub model_id: u8,
    pub precision: u8,
    pub bins_log2: u8,
    pub image_count: u32,
    pub payload: Vec<u32>,
}

impl Container {
    /// Serializes the container; payload words are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.payload.len() + 4);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.model_id);
        out.push(self.precision);
        out.push(self.bins_log2);
        out.extend_from_slice(&self.image_count.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        let payload_start = out.len();
        for w in &self.payload {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let crc = crc32(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates a container. Magic, version and checksum are
    /// checked before anything else is looked at.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::BadContainer("truncated header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::BadContainer("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::BadContainer(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let model_id = bytes[5];
        let precision = bytes[6];
        let bins_log2 = bytes[7];
        let image_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let words = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let need = 20 + 4 * words + 4;
        if bytes.len() != need {
            return Err(Error::BadContainer(format!(
                "expected {need} bytes, found {}",
                bytes.len()
            )));
        }
        let payload_bytes = &bytes[20..20 + 4 * words];
        let stored_crc = u32::from_le_bytes(bytes[need - 4..].try_into().unwrap());
        let actual = crc32(payload_bytes);
        if stored_crc != actual {
            return Err(Error::BadContainer(format!(
                "checksum mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
            )));
        }
        let payload = payload_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Container {
            model_id,
            precision,
            bins_log2,
            image_count,
            payload,
        })
    }

    /// Header + payload + checksum size in bytes.
    pub fn byte_len(&self) -> usize {
        20 + 4 * self.payload.len() + 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crc32_known_vectors() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn roundtrip_and_rejections() {
        let c = Container {
            model_id: 2,
            precision: 16,
            bins_log2: 12,
            image_count: 7,
            payload: vec![1, 2, 3, 0xDEADBEEF],
        };
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Container::from_bytes(&bad_magic).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(Container::from_bytes(&bad_version).is_err());

        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 10] ^= 0x40; // corrupt payload
        assert!(matches!(
            Container::from_bytes(&flipped),
            Err(Error::BadContainer(_))
        ));

        assert!(Container::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn zero_image_container_is_valid() {
        let c = Container {
            model_id: 1,
            precision: 16,
            bins_log2: 12,
            image_count: 0,
            payload: vec![0],
        };
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.image_count, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_container_roundtrip(
            model_id in 0u8..8,
            precision in 1u8..=24,
            bins_log2 in 1u8..=16,
            count in 0u32..1000,
            payload in prop::collection::vec(any::<u32>(), 0..200),
        ) {
            let c = Container { model_id, precision, bins_log2, image_count: count, payload };
            prop_assert_eq!(Container::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
