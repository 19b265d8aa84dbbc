use std::fmt;
use std::str::FromStr;

use super::{f32_down, f32_up, Interval, IntervalSet};
use crate::error::{Error, Result};
use crate::kquant::QuantType;

/// Expansion factor selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// Per-type factors tuned to keep over-approximation low.
    Partial,
    Full,
    Fixed(f64),
}

impl LambdaMode {
    pub fn for_type(self, qt: QuantType) -> f64 {
        match self {
            Self::Full => 1.0,
            Self::Fixed(v) => v,
            Self::Partial => match qt {
                QuantType::Q2K | QuantType::Q3K => 1.0,
                QuantType::Q4K => 0.4,
                QuantType::Q5K => 0.1,
                QuantType::Q6K => 0.6,
            },
        }
    }
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Partial => f.write_str("partial"),
            Self::Full => f.write_str("full"),
            Self::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for LambdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "partial" => Ok(Self::Partial),
            "full" => Ok(Self::Full),
            other => match other.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => Ok(Self::Fixed(v)),
                _ => Err(Error::InvalidConfig(format!(
                    "lambda must be `partial`, `full` or a number in [0, 1], got `{s}`"
                ))),
            },
        }
    }
}

/// Widens each interval toward `λ·I_max`, where `I_max` is the widest
/// interval in its subblock of `subblock_len` weights.
///
/// Intervals already at least that wide are kept. Intervals at least half
/// as wide are extended on the side away from the dequantized value by the
/// shortfall; narrower ones are replaced by a symmetric interval of width
/// `λ·I_max` around the weight. Frozen weights are left alone. Bounds are
/// rounded inward to f32, so results never exceed the exact expansion.
pub fn expand_intervals(iv: &IntervalSet, lambda: f64, subblock_len: usize) -> Result<IntervalSet> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
    }
    if subblock_len == 0 || !iv.len().is_multiple_of(subblock_len) {
        return Err(Error::InvalidConfig(format!(
            "{} weights do not split into subblocks of {subblock_len}",
            iv.len()
        )));
    }
    let mut bounds = Vec::with_capacity(iv.len());
    for (ws, bs) in iv
        .origin()
        .chunks_exact(subblock_len)
        .zip(iv.bounds().chunks_exact(subblock_len))
    {
        let i_max = bs.iter().map(Interval::width).fold(0.0, f64::max);
        let target = lambda * i_max;
        for (&w, &b) in ws.iter().zip(bs) {
            bounds.push(expand_one(w, b, target, bounds.len())?);
        }
    }
    Ok(IntervalSet::new_unchecked(iv.origin().to_vec(), bounds))
}

fn expand_one(w: f32, b: Interval, target: f64, index: usize) -> Result<Interval> {
    if b.frozen {
        return Ok(b);
    }
    let below = b.lo < w;
    let above = b.hi > w;
    if below && above {
        return Err(Error::InvalidInterval {
            index,
            lo: b.lo,
            hi: b.hi,
            weight: w,
        });
    }
    let width = b.width();
    let wf = w as f64;
    let out = if width >= target {
        b
    } else if width >= target / 2.0 {
        let extra = target - width;
        if below {
            Interval {
                hi: f32_down(wf + extra).max(w),
                ..b
            }
        } else {
            Interval {
                lo: f32_up(wf - extra).min(w),
                ..b
            }
        }
    } else {
        let half = target / 2.0;
        Interval {
            lo: f32_up(wf - half).min(b.lo),
            hi: f32_down(wf + half).max(b.hi),
            frozen: false,
        }
    };
    Ok(out)
}
