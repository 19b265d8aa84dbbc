use rayon::prelude::*;

use super::{absmax_index, check_group, ZeroShotQuantized};
use crate::error::{Error, Result};
use crate::intervals::{f32_down, f32_up, Interval, IntervalSet};

fn check_bits(bits: u32) -> Result<i32> {
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "absmax bit width must be in 2..=8, got {bits}"
        )));
    }
    Ok((1 << (bits - 1)) - 1)
}

/// Rounds a positive normal `v` to `sig_bits` significant bits, ties to even.
fn round_significand(v: f64, sig_bits: u32) -> f64 {
    let exp = ((v.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let quantum = 2f64.powi(exp - (sig_bits as i32 - 1));
    (v / quantum).round_ties_even() * quantum
}

/// Symmetric absmax quantization to `bits`-bit signed codes in `[-L, L]`,
/// `L = 2^(bits-1) - 1`.
///
/// The step `d ≈ max|x| / L` is kept to `24 - bits` significant bits so that
/// every level `k·d` and every midpoint between levels is an exact f32. It
/// differs from the exact ratio by at most 2^-(25-bits) relatively, which is
/// far too little to push any code out of range.
pub fn absmax_quantize(group: &[f32], bits: u32) -> Result<ZeroShotQuantized> {
    let levels = check_bits(bits)?;
    check_group(group)?;
    let amax = group.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if amax == 0.0 {
        return Ok(ZeroShotQuantized {
            d: 0.0,
            codes: vec![0; group.len()],
        });
    }
    let d = round_significand(amax as f64 / levels as f64, 24 - bits) as f32;
    let d = if d > 0.0 { d } else { f32::from_bits(1) };
    let codes = group
        .iter()
        .map(|&x| {
            (x as f64 / d as f64)
                .round_ties_even()
                .clamp(-levels as f64, levels as f64) as i32
        })
        .collect();
    Ok(ZeroShotQuantized { d, codes })
}

impl ZeroShotQuantized {
    /// `code·d` for integer schemes.
    pub fn dequantize_levels(&self) -> Vec<f32> {
        self.codes.iter().map(|&k| k as f32 * self.d).collect()
    }
}

/// Exact preservation cells `[(k - ½)d, (k + ½)d]` for every element, with
/// the absmax element frozen since moving it changes `d`.
pub fn exact_intervals_evenly_spaced(group: &[f32], bits: u32) -> Result<IntervalSet> {
    let q = absmax_quantize(group, bits)?;
    let pinned = absmax_index(group);
    let d = q.d as f64;
    let bounds = group
        .iter()
        .zip(&q.codes)
        .enumerate()
        .map(|(i, (&w, &k))| {
            if i == pinned {
                return Interval::point(w, true);
            }
            let k = k as f64;
            Interval {
                lo: f32_up((k - 0.5) * d).min(w),
                hi: f32_down((k + 0.5) * d).max(w),
                frozen: false,
            }
        })
        .collect();
    IntervalSet::new(group.to_vec(), bounds)
}

/// Error-based intervals `{w, code·d}` for an absmax group, absmax element frozen.
pub fn absmax_error_intervals(group: &[f32], bits: u32) -> Result<IntervalSet> {
    let q = absmax_quantize(group, bits)?;
    let mut frozen = vec![false; group.len()];
    frozen[absmax_index(group)] = true;
    IntervalSet::from_dequantized(group, &q.dequantize_levels(), &frozen)
}

/// Exact intervals for a flat array split into groups of `group_len`
/// (for example one group per matrix row).
pub fn exact_intervals_evenly_spaced_tensor(data: &[f32], group_len: usize, bits: u32) -> Result<IntervalSet> {
    if group_len == 0 || !data.len().is_multiple_of(group_len) {
        return Err(Error::WrongGroupLength {
            expected: group_len,
            actual: data.len() % group_len.max(1),
        });
    }
    let parts = data
        .par_chunks_exact(group_len)
        .map(|g| exact_intervals_evenly_spaced(g, bits).map(|iv| iv.bounds().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    IntervalSet::new(data.to_vec(), parts.concat())
}
