//! Quantization-preserving constraint intervals.
//!
//! An [`IntervalSet`] pairs every weight of a tensor with a closed interval
//! `[lo, hi]` it may move within. Error-based intervals span from a weight to
//! its dequantized value, so movement inside them only lowers the rounding
//! error. They can be widened per subblock ([`expand_intervals`]), combined
//! across quantization types ([`intersect_intervals`]) and used as a box
//! constraint for training ([`project_weights`]).

mod expand;
mod freeze;
pub mod kqi;
mod overapprox;
mod report;
mod stats;
mod toy;

pub use expand::{expand_intervals, LambdaMode};
pub use freeze::{compute_freeze_mask, error_based_intervals, error_intervals, FreezeStrategy};
pub use overapprox::{noise_defense_eval, overapprox_fraction, OverApproxReport};
pub use report::{AnalysisReport, HistogramReport, OverApproxSummary};
pub use stats::{interval_stats, Histogram, IntervalStats};
pub use toy::{mean_l1, nonsoundness_toy, ToyDemo};

use crate::error::{Error, Result};
use crate::tensor_io::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f32,
    pub hi: f32,
    pub frozen: bool,
}

impl Interval {
    pub fn point(w: f32, frozen: bool) -> Self {
        Self { lo: w, hi: w, frozen }
    }

    /// Interval between a weight and its dequantized value.
    pub fn between(w: f32, alpha: f32) -> Self {
        Self {
            lo: w.min(alpha),
            hi: w.max(alpha),
            frozen: false,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi as f64 - self.lo as f64
    }

    pub fn contains(&self, v: f32) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// `self ⊆ other`
    pub fn is_within(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

/// Per-weight intervals aligned with a flat weight array.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet {
    origin: Vec<f32>,
    bounds: Vec<Interval>,
}

impl IntervalSet {
    /// Checks that every interval is finite, contains its weight, and that
    /// frozen intervals collapse onto the weight.
    pub fn new(origin: Vec<f32>, bounds: Vec<Interval>) -> Result<Self> {
        if origin.len() != bounds.len() {
            return Err(Error::AlignmentMismatch(format!(
                "{} weights but {} intervals",
                origin.len(),
                bounds.len()
            )));
        }
        for (index, (&w, b)) in origin.iter().zip(&bounds).enumerate() {
            let ok = w.is_finite()
                && b.lo.is_finite()
                && b.hi.is_finite()
                && b.contains(w)
                && (!b.frozen || (b.lo == w && b.hi == w));
            if !ok {
                return Err(Error::InvalidInterval {
                    index,
                    lo: b.lo,
                    hi: b.hi,
                    weight: w,
                });
            }
        }
        Ok(Self { origin, bounds })
    }

    pub(crate) fn new_unchecked(origin: Vec<f32>, bounds: Vec<Interval>) -> Self {
        debug_assert!(Self::new(origin.clone(), bounds.clone()).is_ok());
        Self { origin, bounds }
    }

    /// Endpoints `{w, α}` per weight; `frozen[i]` pins weight `i`.
    pub fn from_dequantized(origin: &[f32], dequantized: &[f32], frozen: &[bool]) -> Result<Self> {
        if origin.len() != dequantized.len() || origin.len() != frozen.len() {
            return Err(Error::AlignmentMismatch(format!(
                "{} weights, {} dequantized values, {} freeze flags",
                origin.len(),
                dequantized.len(),
                frozen.len()
            )));
        }
        let bounds = origin
            .iter()
            .zip(dequantized)
            .zip(frozen)
            .map(|((&w, &a), &f)| {
                if f {
                    Interval::point(w, true)
                } else {
                    Interval::between(w, a)
                }
            })
            .collect();
        Self::new(origin.to_vec(), bounds)
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn origin(&self) -> &[f32] {
        &self.origin
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn frozen_count(&self) -> usize {
        self.bounds.iter().filter(|b| b.frozen).count()
    }

    fn check_aligned(&self, other: &IntervalSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::AlignmentMismatch(format!(
                "{} vs {} weights",
                self.len(),
                other.len()
            )));
        }
        if let Some(i) = self
            .origin
            .iter()
            .zip(&other.origin)
            .position(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::AlignmentMismatch(format!("origin weights differ at index {i}")));
        }
        Ok(())
    }
}

/// Pointwise intersection. Frozen anywhere means frozen in the result; an
/// empty intersection collapses to the weight itself.
pub fn intersect_intervals(sets: &[IntervalSet]) -> Result<IntervalSet> {
    let (first, rest) = sets
        .split_first()
        .ok_or_else(|| Error::AlignmentMismatch("no interval sets to intersect".into()))?;
    for s in rest {
        first.check_aligned(s)?;
    }
    let bounds = (0..first.len())
        .map(|i| {
            let w = first.origin[i];
            let mut acc = first.bounds[i];
            for s in rest {
                let b = s.bounds[i];
                acc.lo = acc.lo.max(b.lo);
                acc.hi = acc.hi.min(b.hi);
                acc.frozen |= b.frozen;
            }
            if acc.frozen || acc.lo > acc.hi {
                Interval::point(w, acc.frozen)
            } else {
                acc
            }
        })
        .collect();
    Ok(IntervalSet::new_unchecked(first.origin.clone(), bounds))
}

/// Clamps every weight into its interval. Frozen weights are restored to
/// their original value bit for bit.
pub fn project_weights(weights: &[f32], iv: &IntervalSet) -> Result<Vec<f32>> {
    if weights.len() != iv.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} weights but {} intervals",
            weights.len(),
            iv.len()
        )));
    }
    Ok(weights
        .iter()
        .zip(&iv.bounds)
        .zip(&iv.origin)
        .map(
            |((&v, b), &w)| {
                if b.frozen || v.is_nan() {
                    w
                } else {
                    v.clamp(b.lo, b.hi)
                }
            },
        )
        .collect())
}

pub fn project_tensor(t: &Tensor, iv: &IntervalSet) -> Result<Tensor> {
    t.with_data(project_weights(t.data(), iv)?)
}

/// Largest f32 not above `v`.
pub(crate) fn f32_down(v: f64) -> f32 {
    let f = v as f32;
    if f as f64 > v {
        f.next_down()
    } else {
        f
    }
}

/// Smallest f32 not below `v`.
pub(crate) fn f32_up(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up()
    } else {
        f
    }
}
