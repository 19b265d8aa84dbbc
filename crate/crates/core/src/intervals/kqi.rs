//! `KQI1` interval files.
//!
//! Header: `KQI1`, u64 weight count. Each weight: f32 lo, f32 hi, u8 flags
//! (bit 0 = frozen). The weights themselves are not stored; a file is
//! paired with its tensor on load.

use std::fs;
use std::path::Path;

use super::{Interval, IntervalSet};
use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const KQI_MAGIC: &[u8; 4] = b"KQI1";
const FLAG_FROZEN: u8 = 1;
const RECORD_LEN: usize = 9;

pub fn encode_kqi(bounds: &[Interval]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + RECORD_LEN * bounds.len());
    out.extend_from_slice(KQI_MAGIC);
    out.extend_from_slice(&(bounds.len() as u64).to_le_bytes());
    for b in bounds {
        out.extend_from_slice(&b.lo.to_le_bytes());
        out.extend_from_slice(&b.hi.to_le_bytes());
        out.push(if b.frozen { FLAG_FROZEN } else { 0 });
    }
    out
}

/// Raw records; containment is checked once they are paired with weights.
pub fn decode_kqi(bytes: &[u8]) -> Result<Vec<Interval>> {
    let mut r = Reader::new(bytes);
    r.magic(KQI_MAGIC)?;
    let count = r.u64()?;
    let needed = count.saturating_mul(RECORD_LEN as u64);
    if needed > r.remaining() as u64 {
        return Err(Error::TruncatedFile {
            offset: r.offset(),
            needed,
            available: r.remaining() as u64,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let lo = r.f32()?;
        let hi = r.f32()?;
        let offset = r.offset();
        let flags = r.u8()?;
        if flags & !FLAG_FROZEN != 0 {
            return Err(Error::Unsupported {
                what: "interval flags",
                value: flags as u64,
                offset,
            });
        }
        out.push(Interval {
            lo,
            hi,
            frozen: flags & FLAG_FROZEN != 0,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::LengthMismatch {
            expected: bytes.len() - r.remaining(),
            actual: bytes.len(),
        });
    }
    Ok(out)
}

pub fn write_kqi(iv: &IntervalSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_kqi(iv.bounds())).map_err(|e| Error::io(path, e))
}

/// Reads a `KQI1` file and pairs it with the weights it was computed from.
pub fn read_kqi(path: impl AsRef<Path>, origin: &[f32]) -> Result<IntervalSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    IntervalSet::new(origin.to_vec(), decode_kqi(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IntervalSet {
        IntervalSet::from_dequantized(&[0.5, -0.25, 1.0], &[0.75, -0.5, 0.0], &[false, false, true]).unwrap()
    }

    #[test]
    fn round_trip() {
        let iv = sample();
        let bytes = encode_kqi(iv.bounds());
        assert_eq!(bytes.len(), 12 + 3 * RECORD_LEN);
        assert_eq!(decode_kqi(&bytes).unwrap(), iv.bounds());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.kqi");
        write_kqi(&iv, &p).unwrap();
        assert_eq!(read_kqi(&p, iv.origin()).unwrap(), iv);
    }

    #[test]
    fn wrong_weights_rejected() {
        let iv = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.kqi");
        write_kqi(&iv, &p).unwrap();
        assert!(matches!(
            read_kqi(&p, &[9.0, 9.0, 9.0]),
            Err(Error::InvalidInterval { index: 0, .. })
        ));
        assert!(matches!(read_kqi(&p, &[0.5]), Err(Error::AlignmentMismatch(_))));
    }

    #[test]
    fn malformed() {
        let bytes = encode_kqi(sample().bounds());
        assert!(matches!(
            decode_kqi(&bytes[..20]),
            Err(Error::TruncatedFile { offset: 12, .. })
        ));
        let mut bad = bytes.clone();
        bad[12 + 8] = 0x80;
        assert!(matches!(decode_kqi(&bad), Err(Error::Unsupported { offset: 20, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_kqi(&long), Err(Error::LengthMismatch { .. })));
    }
}
