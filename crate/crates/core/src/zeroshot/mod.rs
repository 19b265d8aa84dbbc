//! Zero-shot quantizers whose scale depends only on the group's largest
//! magnitude, and the exact intervals within which every code is kept.
//!
//! Two families are covered: evenly spaced signed integers (`absmax`) and
//! 4-bit lookup codebooks such as NF4 and FP4.

mod absmax;
mod codebook;

pub use absmax::{
    absmax_error_intervals, absmax_quantize, exact_intervals_evenly_spaced, exact_intervals_evenly_spaced_tensor,
};
pub use codebook::{
    codebook_quantize, exact_intervals_codebook, exact_intervals_codebook_tensor, Codebook, DEFAULT_BLOCK_SIZE,
};

use crate::error::{Error, Result};

/// One quantized group: a scale and one code per element.
///
/// For integer schemes codes are signed levels; for codebooks they index
/// into the level table.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotQuantized {
    pub d: f32,
    pub codes: Vec<i32>,
}

/// Index of the first element with the largest magnitude.
pub(crate) fn absmax_index(group: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in group.iter().enumerate() {
        if v.abs() > group[best].abs() {
            best = i;
        }
    }
    best
}

pub(crate) fn check_group(group: &[f32]) -> Result<()> {
    if group.is_empty() {
        return Err(Error::WrongGroupLength { expected: 1, actual: 0 });
    }
    match group.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteData {
            index,
            value: group[index],
        }),
        None => Ok(()),
    }
}
