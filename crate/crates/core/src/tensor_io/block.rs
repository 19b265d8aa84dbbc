use crate::error::{Error, Result};
use crate::kquant::{Layout, QuantType};

/// Weights per superblock for every k-quant type.
pub const QK_K: usize = 256;

/// 256 weights viewed as `m` subblocks of `n` weights each.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperBlock {
    values: [f32; QK_K],
    layout: Layout,
}

impl SuperBlock {
    pub fn new(values: [f32; QK_K], layout: Layout) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData {
                index,
                value: values[index],
            });
        }
        Ok(Self { values, layout })
    }

    pub fn from_slice(values: &[f32], layout: Layout) -> Result<Self> {
        let arr: [f32; QK_K] = values.try_into().map_err(|_| Error::LengthMismatch {
            expected: QK_K,
            actual: values.len(),
        })?;
        Self::new(arr, layout)
    }

    pub fn values(&self) -> &[f32; QK_K] {
        &self.values
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn subblock(&self, i: usize) -> &[f32] {
        let n = self.layout.n;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn subblocks(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.layout.n)
    }
}

/// Splits `data` into superblocks laid out for `qt`. Padding is never applied.
pub fn partition_superblocks(data: &[f32], qt: QuantType) -> Result<Vec<SuperBlock>> {
    check_len(data.len())?;
    data.chunks_exact(QK_K)
        .map(|c| SuperBlock::from_slice(c, qt.layout()))
        .collect()
}

pub(crate) fn check_len(len: usize) -> Result<()> {
    if len == 0 || !len.is_multiple_of(QK_K) {
        return Err(Error::NotMultipleOf256 {
            len,
            remainder: len % QK_K,
        });
    }
    Ok(())
}

pub fn concat_superblocks(blocks: &[SuperBlock]) -> Vec<f32> {
    blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
}
