//! Canonical `KQB1` block container.
//!
//! Header: `KQB1`, u8 type code (0..=4 for Q2_K..Q6_K), u64 block count.
//! Each block: f32 d_scales, f32 d_mins, m × u8 scale codes, m × u8 min
//! codes, 256 × i8 weight codes. Little-endian throughout, one code per byte.

use std::fs;
use std::path::Path;

use super::config::QuantType;
use super::superblock::QuantizedSuperBlock;
use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::tensor_io::QK_K;

pub const KQB_MAGIC: &[u8; 4] = b"KQB1";
const KQB_HEADER_LEN: usize = 4 + 1 + 8;

/// Serialized size of one block of `qt`.
pub fn block_len(qt: QuantType) -> usize {
    8 + 2 * qt.layout().m + QK_K
}

pub fn pack_block(q: &QuantizedSuperBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(block_len(q.qtype()));
    pack_block_into(q, &mut out);
    out
}

fn pack_block_into(q: &QuantizedSuperBlock, out: &mut Vec<u8>) {
    out.extend_from_slice(&q.d_scales().to_le_bytes());
    out.extend_from_slice(&q.d_mins().to_le_bytes());
    out.extend_from_slice(q.q_scales());
    out.extend_from_slice(q.q_mins());
    out.extend(q.codes().iter().map(|&c| c as u8));
}

pub fn unpack_block(bytes: &[u8], qt: QuantType) -> Result<QuantizedSuperBlock> {
    let expected = block_len(qt);
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    read_block(&mut Reader::new(bytes), qt)
}

fn read_block(r: &mut Reader<'_>, qt: QuantType) -> Result<QuantizedSuperBlock> {
    let m = qt.layout().m;
    let d_scales = r.f32()?;
    let d_mins = r.f32()?;
    let q_scales = r.take(m)?.to_vec();
    let q_mins = r.take(m)?.to_vec();
    let mut codes = [0i8; QK_K];
    for c in codes.iter_mut() {
        *c = r.i8()?;
    }
    QuantizedSuperBlock::new(qt, codes, q_scales, q_mins, d_scales, d_mins)
}

/// Encodes a whole block stream. All blocks must share one type.
pub fn encode_kqb(qt: QuantType, blocks: &[QuantizedSuperBlock]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(KQB_HEADER_LEN + blocks.len() * block_len(qt));
    out.extend_from_slice(KQB_MAGIC);
    out.push(qt.code());
    out.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for b in blocks {
        if b.qtype() != qt {
            return Err(Error::InvalidConfig(format!(
                "mixed block types in one stream: {} and {qt}",
                b.qtype()
            )));
        }
        pack_block_into(b, &mut out);
    }
    Ok(out)
}

pub fn decode_kqb(bytes: &[u8]) -> Result<(QuantType, Vec<QuantizedSuperBlock>)> {
    let mut r = Reader::new(bytes);
    r.magic(KQB_MAGIC)?;
    let offset = r.offset();
    let code = r.u8()?;
    let qt = QuantType::from_code(code).ok_or(Error::Unsupported {
        what: "type code",
        value: code as u64,
        offset,
    })?;
    let count = r.u64()?;
    let expected = (count as u128) * block_len(qt) as u128 + KQB_HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::LengthMismatch {
            expected: usize::try_from(expected).unwrap_or(usize::MAX),
            actual: bytes.len(),
        });
    }
    let blocks = (0..count).map(|_| read_block(&mut r, qt)).collect::<Result<Vec<_>>>()?;
    Ok((qt, blocks))
}

pub fn write_kqb(path: impl AsRef<Path>, qt: QuantType, blocks: &[QuantizedSuperBlock]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_kqb(qt, blocks)?).map_err(|e| Error::io(path, e))
}

pub fn read_kqb(path: impl AsRef<Path>) -> Result<(QuantType, Vec<QuantizedSuperBlock>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kqb(&bytes)
}
