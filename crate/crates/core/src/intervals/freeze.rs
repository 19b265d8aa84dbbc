use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Interval, IntervalSet};
use crate::error::{Error, Result};
use crate::kquant::{quantize_superblock_traced, KQuantConfig, QuantTrace, QuantizedSuperBlock};
use crate::tensor_io::block::check_len;
use crate::tensor_io::{SuperBlock, QK_K};

/// Which weights are pinned to their original value.
///
/// Pinning the extreme weights of a subblock keeps its affine fit from
/// drifting; pinning the subblock that owns the largest scale (and the
/// largest stored min) keeps the double-quantization step fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeStrategy {
    Base,
    MaxMin,
    Subblock,
    Both,
}

impl FreezeStrategy {
    pub const ALL: [FreezeStrategy; 4] = [Self::Base, Self::MaxMin, Self::Subblock, Self::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::MaxMin => "maxmin",
            Self::Subblock => "subblock",
            Self::Both => "both",
        }
    }

    fn extremes(self) -> bool {
        matches!(self, Self::MaxMin | Self::Both)
    }

    fn subblocks(self) -> bool {
        matches!(self, Self::Subblock | Self::Both)
    }
}

impl fmt::Display for FreezeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FreezeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "base" | "none" => Ok(Self::Base),
            "maxmin" => Ok(Self::MaxMin),
            "subblock" => Ok(Self::Subblock),
            "both" => Ok(Self::Both),
            _ => Err(Error::InvalidConfig(format!("unknown freeze strategy `{s}`"))),
        }
    }
}

/// First index of the largest value.
fn argmax_by<T: Copy, K: PartialOrd>(items: &[T], key: impl Fn(T) -> K) -> Option<usize> {
    let mut best: Option<(usize, K)> = None;
    for (i, &v) in items.iter().enumerate() {
        let k = key(v);
        if best.as_ref().is_none_or(|(_, b)| k > *b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// Freeze mask for one superblock. Ties resolve to the lowest index.
pub fn compute_freeze_mask(
    x: &SuperBlock,
    trace: &QuantTrace,
    cfg: &KQuantConfig,
    strategy: FreezeStrategy,
) -> Result<[bool; QK_K]> {
    let n = cfg.layout.n;
    if x.layout() != cfg.layout || trace.fits.len() != cfg.layout.m {
        return Err(Error::AlignmentMismatch(format!(
            "{} subblock fits for a {}x{} layout",
            trace.fits.len(),
            cfg.layout.m,
            n
        )));
    }
    let mut mask = [false; QK_K];
    if strategy.extremes() {
        for (i, sub) in x.subblocks().enumerate() {
            let hi = argmax_by(sub, |v| v).unwrap_or(0);
            let lo = argmax_by(sub, |v| -v).unwrap_or(0);
            mask[i * n + hi] = true;
            mask[i * n + lo] = true;
        }
    }
    if strategy.subblocks() {
        let mut pinned = vec![argmax_by(&trace.fits, |f| f.scale.max(0.0))];
        if cfg.use_mins {
            pinned.push(argmax_by(&trace.fits, |f| (-f.min).max(0.0)));
        }
        for s in pinned.into_iter().flatten() {
            mask[s * n..(s + 1) * n].fill(true);
        }
    }
    Ok(mask)
}

/// Error-based intervals `[min(w, α), max(w, α)]` for one superblock, with
/// masked weights collapsed to a point.
pub fn error_based_intervals(x: &SuperBlock, q: &QuantizedSuperBlock, mask: &[bool; QK_K]) -> Result<IntervalSet> {
    if x.layout() != q.qtype().layout() {
        return Err(Error::AlignmentMismatch(format!(
            "superblock layout {:?} does not match {}",
            x.layout(),
            q.qtype()
        )));
    }
    IntervalSet::from_dequantized(x.values(), &q.dequantize(), mask)
}

/// Error-based intervals for a whole flat weight array.
pub fn error_intervals(data: &[f32], cfg: &KQuantConfig, strategy: FreezeStrategy) -> Result<IntervalSet> {
    check_len(data.len())?;
    let parts = data
        .par_chunks_exact(QK_K)
        .map(|c| {
            let x = SuperBlock::from_slice(c, cfg.layout)?;
            let (q, trace) = quantize_superblock_traced(&x, cfg)?;
            let mask = compute_freeze_mask(&x, &trace, cfg, strategy)?;
            let deq = q.dequantize();
            Ok(c.iter()
                .zip(&deq)
                .zip(&mask)
                .map(|((&w, &a), &f)| {
                    if f {
                        Interval::point(w, true)
                    } else {
                        Interval::between(w, a)
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    IntervalSet::new(data.to_vec(), parts.concat())
}
