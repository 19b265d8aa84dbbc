use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{absmax_index, check_group, ZeroShotQuantized};
use crate::error::{Error, Result};
use crate::intervals::{f32_down, f32_up, Interval, IntervalSet};

pub const DEFAULT_BLOCK_SIZE: usize = 64;

const NF4_JSON: &str = include_str!("../../data/nf4.json");
const FP4_JSON: &str = include_str!("../../data/fp4.json");

/// Lookup table of normalized levels in `[-1, 1]`.
///
/// Levels are strictly increasing and include zero exactly once. FP4 has 15
/// distinct levels because its signed zeros coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCodebook")]
pub struct Codebook {
    name: String,
    levels: Vec<f32>,
}

#[derive(Deserialize)]
struct RawCodebook {
    name: String,
    levels: Vec<f32>,
}

impl TryFrom<RawCodebook> for Codebook {
    type Error = Error;

    fn try_from(raw: RawCodebook) -> Result<Self> {
        Codebook::new(raw.name, raw.levels)
    }
}

impl Codebook {
    pub fn new(name: impl Into<String>, levels: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let bad = |why: &str| Err(Error::InvalidCodebook(format!("{name}: {why}")));
        if !(2..=16).contains(&levels.len()) {
            return bad(&format!("expected 2 to 16 levels, got {}", levels.len()));
        }
        if levels.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return bad("levels must lie in [-1, 1]");
        }
        if levels.windows(2).any(|p| p[0] >= p[1]) {
            return bad("levels must be strictly increasing");
        }
        if levels.iter().filter(|&&v| v == 0.0).count() != 1 {
            return bad("exactly one level must be zero");
        }
        Ok(Self { name, levels })
    }

    pub fn nf4() -> Self {
        serde_json::from_str(NF4_JSON).expect("bundled NF4 table is valid")
    }

    pub fn fp4() -> Self {
        serde_json::from_str(FP4_JSON).expect("bundled FP4 table is valid")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "nf4" => Ok(Self::nf4()),
            "fp4" => Ok(Self::fp4()),
            _ => Err(Error::InvalidCodebook(format!("unknown codebook `{name}`"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[f32] {
        &self.levels
    }

    pub fn zero_index(&self) -> usize {
        self.levels.iter().position(|&v| v == 0.0).expect("validated")
    }

    /// Index of the level nearest to `r`, lower index on ties.
    pub fn nearest(&self, r: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, &l) in self.levels.iter().enumerate() {
            let dist = (r - l as f64).abs();
            if dist < best_dist {
                best = k;
                best_dist = dist;
            }
        }
        best
    }

    pub fn dequantize(&self, q: &ZeroShotQuantized) -> Vec<f32> {
        q.codes.iter().map(|&k| self.levels[k as usize] * q.d).collect()
    }
}

/// Scales the group by its largest magnitude and maps every element to the
/// nearest codebook level. The group must hold exactly `block` elements.
pub fn codebook_quantize(group: &[f32], cb: &Codebook, block: usize) -> Result<ZeroShotQuantized> {
    if group.len() != block {
        return Err(Error::WrongGroupLength {
            expected: block,
            actual: group.len(),
        });
    }
    check_group(group)?;
    let d = group.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let codes = if d == 0.0 {
        vec![cb.zero_index() as i32; group.len()]
    } else {
        group.iter().map(|&x| cb.nearest(x as f64 / d as f64) as i32).collect()
    };
    Ok(ZeroShotQuantized { d, codes })
}

/// Voronoi cell of each element's level, scaled by `d`; the outermost cells
/// stop at `±d`. The absmax element is frozen.
pub fn exact_intervals_codebook(group: &[f32], cb: &Codebook, block: usize) -> Result<IntervalSet> {
    let q = codebook_quantize(group, cb, block)?;
    let pinned = absmax_index(group);
    let d = q.d as f64;
    let lv = cb.levels();
    let bounds = group
        .iter()
        .zip(&q.codes)
        .enumerate()
        .map(|(i, (&w, &k))| {
            if i == pinned {
                return Interval::point(w, true);
            }
            let k = k as usize;
            let lo = if k == 0 {
                lv[0] as f64
            } else {
                (lv[k - 1] as f64 + lv[k] as f64) / 2.0
            };
            let hi = if k + 1 == lv.len() {
                lv[k] as f64
            } else {
                (lv[k] as f64 + lv[k + 1] as f64) / 2.0
            };
            Interval {
                lo: f32_up(lo * d).min(w),
                hi: f32_down(hi * d).max(w),
                frozen: false,
            }
        })
        .collect();
    IntervalSet::new(group.to_vec(), bounds)
}

pub fn exact_intervals_codebook_tensor(data: &[f32], cb: &Codebook, block: usize) -> Result<IntervalSet> {
    if block == 0 || !data.len().is_multiple_of(block) {
        return Err(Error::WrongGroupLength {
            expected: block,
            actual: data.len() % block.max(1),
        });
    }
    let parts = data
        .par_chunks_exact(block)
        .map(|g| exact_intervals_codebook(g, cb, block).map(|iv| iv.bounds().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    IntervalSet::new(data.to_vec(), parts.concat())
}
