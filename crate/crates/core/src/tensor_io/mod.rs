//! Tensor containers, superblock partitioning, layer mixes and seeding.
//!
//! Tensors are persisted in the `KQT1` container:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `KQT1`                             |
//! | 1            | version (1)                              |
//! | 1            | dtype code (0 = float32)                 |
//! | 1            | ndim                                     |
//! | 8 × ndim     | dims, u64 little-endian                  |
//! | 4 × numel    | row-major float32 payload, little-endian |

pub(crate) mod block;
mod mix;
mod seed;

use std::fs;
use std::path::Path;

pub use block::{concat_superblocks, partition_superblocks, SuperBlock, QK_K};
pub use mix::{resolve_type, Manifest, ManifestEntry, MixConfig, MixRule};
pub use seed::SeedSpec;

use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const KQT_MAGIC: &[u8; 4] = b"KQT1";
pub const KQT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

/// A named, row-major float32 tensor. Always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if dims.is_empty() || dims.contains(&0) || dims.len() > u8::MAX as usize {
            return Err(Error::ShapeMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            name: name.into(),
            dims,
            data,
        })
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(name: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let len = data.len();
        Self::new(name, vec![len], data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same name and shape, new payload.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.name.clone(), self.dims.clone(), data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(KQT_MAGIC);
        out.push(KQT_VERSION);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(KQT_MAGIC)?;
        let offset = r.offset();
        let version = r.u8()?;
        if version != KQT_VERSION {
            return Err(Error::Unsupported {
                what: "KQT version",
                value: version as u64,
                offset,
            });
        }
        let offset = r.offset();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Unsupported {
                what: "dtype code",
                value: dtype as u64,
                offset,
            });
        }
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let offset = r.offset();
            let d = r.u64()?;
            let d = usize::try_from(d).map_err(|_| Error::Unsupported {
                what: "dimension",
                value: d,
                offset,
            })?;
            dims.push(d);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Unsupported {
                what: "element count",
                value: u64::MAX,
                offset: r.offset(),
            })?;
        let payload_len = numel.checked_mul(4).ok_or(Error::TruncatedFile {
            offset: r.offset(),
            needed: u64::MAX,
            available: r.remaining() as u64,
        })?;
        let payload = r.take(payload_len)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if r.remaining() != 0 {
            return Err(Error::LengthMismatch {
                expected: bytes.len() - r.remaining(),
                actual: bytes.len(),
            });
        }
        Self::new(name, dims, data)
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteData {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

/// Reads a `KQT1` file. The tensor is named after the file stem.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Tensor::from_bytes(name, &bytes)
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.kqt");
        let t = Tensor::new("zeros", vec![2, 2], vec![0.0; 4]).unwrap();
        save_tensor(&t, &path).unwrap();
        let len = fs::metadata(&path).unwrap().len();
        assert_eq!(len, 7 + 2 * 8 + 4 * 4);
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.dims(), &[2, 2]);
        assert_eq!(back.data(), &[0.0; 4]);
        assert_eq!(back.name(), "zeros");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from_vec("t", vec![1.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        match Tensor::from_bytes("t", &bytes) {
            Err(Error::BadMagic { found, offset, .. }) => {
                assert_eq!(&found, b"XXXX");
                assert_eq!(offset, 0);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = Tensor::from_vec("t", vec![1.0, 2.0]).unwrap().to_bytes();
        match Tensor::from_bytes("t", &bytes[..bytes.len() - 1]) {
            Err(Error::TruncatedFile { offset, needed, .. }) => {
                assert_eq!(offset, 15);
                assert_eq!(needed, 8);
            }
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_names_element() {
        let mut bytes = Tensor::from_vec("t", vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        let off = bytes.len() - 4;
        bytes[off..].copy_from_slice(&f32::NAN.to_le_bytes());
        match Tensor::from_bytes("t", &bytes) {
            Err(Error::NonFiniteData { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected NonFiniteData, got {other:?}"),
        }
    }

    #[test]
    fn signed_zero_and_subnormal_survive() {
        let data = vec![-0.0, f32::MIN_POSITIVE / 8.0, -f32::MIN_POSITIVE / 3.0, f32::MAX];
        let t = Tensor::from_vec("edge", data.clone()).unwrap();
        let back = Tensor::from_bytes("edge", &t.to_bytes()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.data()), bits(&data));
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let t = Tensor::from_vec("t", vec![0.0]).unwrap();
        let err = save_tensor(&t, "/nonexistent-dir/for/sure/t.kqt").unwrap_err();
        assert!(matches!(err, Error::IoFailure { .. }));
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(matches!(
            Tensor::new("t", vec![3, 2], vec![0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(Tensor::new("t", vec![0], vec![]).is_err());
    }
}
