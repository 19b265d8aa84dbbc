//! Subblock fitting: importance weights, the affine base fit, the weighted
//! least-squares refit and the perturb/refit search.
//!
//! All arithmetic here runs in f64; the resulting scales and mins are only
//! rounded to f32 once they go through double quantization.

use super::config::{Importance, KQuantConfig, Objective, UpdateRule};
use crate::error::{Error, Result};
use crate::tensor_io::SuperBlock;

/// Importance of every weight in the superblock, row-major like the block.
pub fn calc_importance(x: &SuperBlock, cfg: &KQuantConfig) -> Vec<f32> {
    let mut w = Vec::with_capacity(x.values().len());
    for sub in x.values().chunks_exact(cfg.layout.n) {
        match cfg.importance {
            Importance::Square => w.extend(sub.iter().map(|v| v * v)),
            Importance::RmsPlusAbs => {
                let sum_sq: f64 = sub.iter().map(|&v| (v as f64) * (v as f64)).sum();
                let rms = (sum_sq / 32.0).sqrt();
                w.extend(sub.iter().map(|&v| (rms + (v as f64).abs()) as f32));
            }
        }
    }
    w
}

/// Importance with all-zero subblock rows replaced by uniform weights, the
/// form the optimizer and the objective actually use.
pub fn effective_importance(x: &SuperBlock, cfg: &KQuantConfig) -> Vec<f32> {
    let mut w = calc_importance(x, cfg);
    for row in w.chunks_exact_mut(cfg.layout.n) {
        if row.iter().all(|&v| v == 0.0) {
            row.fill(1.0);
        }
    }
    w
}

/// Scale, offset and codes of a subblock.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub scale: f64,
    pub min: f64,
    pub codes: Vec<i32>,
}

impl AffineFit {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&q| q as f64 * self.scale + self.min).collect()
    }
}

/// Result of optimizing one subblock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubblockFit {
    pub scale: f64,
    pub min: f64,
    /// Weighted objective of the returned parameters.
    pub error: f64,
    /// Weighted objective of the affine base fit.
    pub base_error: f64,
}

fn check_finite(x: &[f32]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteData { index, value: x[index] }),
        None => Ok(()),
    }
}

#[inline]
fn clamp_code(v: f64, (lo, hi): (i32, i32)) -> i32 {
    (v.round_ties_even() as i64).clamp(lo as i64, hi as i64) as i32
}

fn min_max(x: &[f32]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    })
}

fn abs_max(x: &[f32]) -> f64 {
    x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
}

/// Zero-shot fit from the subblock extremes.
///
/// With mins: `Min = min(x)`, `Scale = (max - min) / (2^N - 1)`. Without:
/// `Min = 0`, `Scale = max|x| / (2^(N-1) - 1)`. A constant subblock gets the
/// `Scale = 0` sentinel and all-zero codes.
pub fn affine_quant_base(x: &[f32], cfg: &KQuantConfig) -> Result<AffineFit> {
    check_finite(x)?;
    let range = cfg.code_range();
    if cfg.use_mins {
        let (lo, hi) = min_max(x);
        if hi == lo {
            return Ok(AffineFit {
                scale: 0.0,
                min: lo,
                codes: vec![0; x.len()],
            });
        }
        let scale = (hi - lo) / cfg.levels();
        let codes = x.iter().map(|&v| clamp_code((v as f64 - lo) / scale, range)).collect();
        Ok(AffineFit { scale, min: lo, codes })
    } else {
        let amax = abs_max(x);
        if amax == 0.0 {
            return Ok(AffineFit {
                scale: 0.0,
                min: 0.0,
                codes: vec![0; x.len()],
            });
        }
        let scale = amax / cfg.levels();
        let codes = x.iter().map(|&v| clamp_code(v as f64 / scale, range)).collect();
        Ok(AffineFit { scale, min: 0.0, codes })
    }
}

/// Closed-form weighted least squares for `x ≈ Q·Scale + Min`.
///
/// Without mins the offset is pinned to zero and only the scale is solved.
pub fn regression_scale_min(x: &[f32], w: &[f32], q: &[i32], use_mins: bool) -> Result<(f64, f64)> {
    debug_assert_eq!(x.len(), w.len());
    debug_assert_eq!(x.len(), q.len());
    let (mut sw, mut swx, mut swq, mut swq2, mut swxq) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &wi), &qi) in x.iter().zip(w).zip(q) {
        let (xi, wi, qi) = (xi as f64, wi as f64, qi as f64);
        sw += wi;
        swx += wi * xi;
        swq += wi * qi;
        swq2 += wi * qi * qi;
        swxq += wi * xi * qi;
    }
    if use_mins {
        if q.windows(2).all(|p| p[0] == p[1]) {
            return Err(Error::DegenerateRegression);
        }
        let det = sw * swq2 - swq * swq;
        if !(det > 0.0) {
            return Err(Error::DegenerateRegression);
        }
        let scale = (sw * swxq - swx * swq) / det;
        let min = (swq2 * swx - swq * swxq) / det;
        Ok((scale, min))
    } else {
        if !(swq2 > 0.0) {
            return Err(Error::DegenerateRegression);
        }
        Ok((swxq / swq2, 0.0))
    }
}

/// Weighted error of dequantizing `q` with `scale`/`min` against `x`.
pub fn subblock_error(x: &[f32], w: &[f32], q: &[i32], scale: f64, min: f64, obj: Objective) -> f64 {
    x.iter()
        .zip(w)
        .zip(q)
        .map(|((&xi, &wi), &qi)| {
            let diff = xi as f64 - (qi as f64 * scale + min);
            let d = match obj {
                Objective::L1 => diff.abs(),
                Objective::L2 => diff * diff,
            };
            wi as f64 * d
        })
        .sum()
}

/// Optimizes the scale and min of one subblock.
///
/// Starts from [`affine_quant_base`] and only ever accepts a strictly lower
/// weighted error, so the result never does worse than the base fit.
pub fn quantize_subblock(x: &[f32], w: &[f32], cfg: &KQuantConfig) -> Result<SubblockFit> {
    let base = affine_quant_base(x, cfg)?;
    let uniform;
    let w = if w.iter().all(|&v| v == 0.0) {
        uniform = vec![1.0f32; x.len()];
        &uniform[..]
    } else {
        w
    };
    let base_error = subblock_error(x, w, &base.codes, base.scale, base.min, cfg.objective);
    let mut best = SubblockFit {
        scale: base.scale,
        min: base.min,
        error: base_error,
        base_error,
    };
    if base.scale == 0.0 {
        return Ok(best);
    }
    match cfg.update {
        UpdateRule::Grid => grid_search(x, w, cfg, &mut best),
        UpdateRule::Replacing => replacing_search(x, w, cfg, &base, &mut best),
    }
    Ok(best)
}

fn grid_search(x: &[f32], w: &[f32], cfg: &KQuantConfig, best: &mut SubblockFit) {
    let range = cfg.code_range();
    let mut codes = vec![0i32; x.len()];
    let (anchor, span) = if cfg.use_mins {
        let (lo, hi) = min_max(x);
        (lo, hi - lo)
    } else {
        (0.0, abs_max(x))
    };
    for &eps in &cfg.grid {
        let iscale = (cfg.levels() + eps as f64) / span;
        for (c, &v) in codes.iter_mut().zip(x) {
            *c = clamp_code(iscale * (v as f64 - anchor), range);
        }
        let Ok((mut scale, mut min)) = regression_scale_min(x, w, &codes, cfg.use_mins) else {
            continue;
        };
        if cfg.use_mins && min > 0.0 {
            // stored mins are non-negative: refit the scale with the offset pinned at zero
            let Ok((s, _)) = regression_scale_min(x, w, &codes, false) else {
                continue;
            };
            scale = s;
            min = 0.0;
        }
        if !(scale > 0.0) {
            continue;
        }
        let err = subblock_error(x, w, &codes, scale, min, cfg.objective);
        if err < best.error {
            best.error = err;
            best.scale = scale;
            best.min = min;
        }
    }
}

/// Leave-one-out refinement for symmetric codes: drop element `i`, solve the
/// scale on the rest, refit element `i` with it and keep the change when the
/// least-squares error of the whole subblock goes down.
fn replacing_search(x: &[f32], w: &[f32], cfg: &KQuantConfig, base: &AffineFit, best: &mut SubblockFit) {
    let range = cfg.code_range();
    let mut codes = base.codes.clone();
    let mut sumlx = 0.0f64;
    let mut suml2 = 0.0f64;
    for ((&xi, &wi), &qi) in x.iter().zip(w).zip(&codes) {
        sumlx += wi as f64 * xi as f64 * qi as f64;
        suml2 += wi as f64 * (qi as f64) * (qi as f64);
    }
    for _ in 0..cfg.replacing_passes {
        let mut changed = false;
        for i in 0..x.len() {
            let (xi, wi, qi) = (x[i] as f64, w[i] as f64, codes[i] as f64);
            let slx = sumlx - wi * xi * qi;
            let sl2 = suml2 - wi * qi * qi;
            if !(slx > 0.0 && sl2 > 0.0) {
                continue;
            }
            let new_q = clamp_code(xi * sl2 / slx, range);
            if new_q == codes[i] {
                continue;
            }
            let slx = slx + wi * xi * new_q as f64;
            let sl2 = sl2 + wi * (new_q as f64) * (new_q as f64);
            if sl2 > 0.0 && slx * slx * suml2 > sumlx * sumlx * sl2 {
                codes[i] = new_q;
                sumlx = slx;
                suml2 = sl2;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !(suml2 > 0.0 && sumlx > 0.0) {
        return;
    }
    let scale = sumlx / suml2;
    let err = subblock_error(x, w, &codes, scale, 0.0, cfg.objective);
    if err < best.error {
        best.error = err;
        best.scale = scale;
        best.min = 0.0;
    }
}
