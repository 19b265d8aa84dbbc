use rayon::prelude::*;

use super::config::{KQuantConfig, Objective, QuantType};
use super::subblock::{affine_quant_base, effective_importance, quantize_subblock, SubblockFit};
use crate::error::{Error, Result};
use crate::tensor_io::{SuperBlock, QK_K};

/// Codes plus double-quantized subblock parameters of one superblock.
///
/// Mins are stored negated so both parameter vectors are non-negative:
/// `x̂[i][j] = Q[i][j] · (d_scales · Q_scales[i]) − d_mins · Q_mins[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSuperBlock {
    qtype: QuantType,
    codes: [i8; QK_K],
    q_scales: Vec<u8>,
    q_mins: Vec<u8>,
    d_scales: f32,
    d_mins: f32,
}

impl QuantizedSuperBlock {
    /// Validates every range and sign invariant of `qtype`.
    pub fn new(
        qtype: QuantType,
        codes: [i8; QK_K],
        q_scales: Vec<u8>,
        q_mins: Vec<u8>,
        d_scales: f32,
        d_mins: f32,
    ) -> Result<Self> {
        let cfg = qtype.config();
        let m = cfg.layout.m;
        if q_scales.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: q_scales.len(),
            });
        }
        if q_mins.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: q_mins.len(),
            });
        }
        let (lo, hi) = cfg.code_range();
        if let Some(index) = codes.iter().position(|&c| (c as i32) < lo || (c as i32) > hi) {
            return Err(Error::CodeOutOfRange {
                field: "code",
                index,
                value: codes[index] as i64,
                min: lo as i64,
                max: hi as i64,
            });
        }
        let maxq = cfg.max_scale_code();
        for (field, v) in [("scale code", &q_scales), ("min code", &q_mins)] {
            if let Some(index) = v.iter().position(|&c| c as u32 > maxq) {
                return Err(Error::CodeOutOfRange {
                    field,
                    index,
                    value: v[index] as i64,
                    min: 0,
                    max: maxq as i64,
                });
            }
        }
        if !cfg.use_mins {
            if let Some(index) = q_mins.iter().position(|&c| c != 0) {
                return Err(Error::CodeOutOfRange {
                    field: "min code",
                    index,
                    value: q_mins[index] as i64,
                    min: 0,
                    max: 0,
                });
            }
            if d_mins != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{qtype} carries no mins but d_mins = {d_mins}"
                )));
            }
        }
        for (name, d) in [("d_scales", d_scales), ("d_mins", d_mins)] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {d} must be finite and non-negative"
                )));
            }
        }
        Ok(Self {
            qtype,
            codes,
            q_scales,
            q_mins,
            d_scales,
            d_mins,
        })
    }

    pub fn qtype(&self) -> QuantType {
        self.qtype
    }

    pub fn codes(&self) -> &[i8; QK_K] {
        &self.codes
    }

    pub fn q_scales(&self) -> &[u8] {
        &self.q_scales
    }

    pub fn q_mins(&self) -> &[u8] {
        &self.q_mins
    }

    pub fn d_scales(&self) -> f32 {
        self.d_scales
    }

    pub fn d_mins(&self) -> f32 {
        self.d_mins
    }

    /// Effective scale and (stored, non-negative) min of subblock `i`.
    #[inline]
    pub fn subblock_params(&self, i: usize) -> (f32, f32) {
        (
            self.d_scales * self.q_scales[i] as f32,
            self.d_mins * self.q_mins[i] as f32,
        )
    }

    pub fn dequantize_into(&self, out: &mut [f32]) {
        let n = self.qtype.layout().n;
        for (i, (dst, src)) in out.chunks_exact_mut(n).zip(self.codes.chunks_exact(n)).enumerate() {
            let (scale, min) = self.subblock_params(i);
            for (o, &q) in dst.iter_mut().zip(src) {
                *o = q as f32 * scale - min;
            }
        }
    }

    pub fn dequantize(&self) -> [f32; QK_K] {
        let mut out = [0.0f32; QK_K];
        self.dequantize_into(&mut out);
        out
    }
}

/// Side information gathered while quantizing one superblock.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTrace {
    /// Optimized per-subblock parameters before double quantization.
    pub fits: Vec<SubblockFit>,
    /// Negative scales clamped to zero before double quantization.
    pub clamped_scales: usize,
    /// Positive offsets (negative stored mins) clamped to zero.
    pub clamped_mins: usize,
}

fn check_layout(x: &SuperBlock, cfg: &KQuantConfig) -> Result<()> {
    if x.layout() != cfg.layout {
        return Err(Error::InvalidConfig(format!(
            "superblock laid out as {:?}, {} expects {:?}",
            x.layout(),
            cfg.qtype,
            cfg.layout
        )));
    }
    Ok(())
}

pub fn quantize_superblock(x: &SuperBlock, cfg: &KQuantConfig) -> Result<QuantizedSuperBlock> {
    quantize_superblock_traced(x, cfg).map(|(q, _)| q)
}

/// Full pipeline: importance, per-subblock search, double quantization of the
/// scales and stored mins, and the final rounding pass.
pub fn quantize_superblock_traced(x: &SuperBlock, cfg: &KQuantConfig) -> Result<(QuantizedSuperBlock, QuantTrace)> {
    check_layout(x, cfg)?;
    let w = effective_importance(x, cfg);
    let fits = x
        .subblocks()
        .zip(w.chunks_exact(cfg.layout.n))
        .map(|(sub, wi)| quantize_subblock(sub, wi, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (q, clamped_scales, clamped_mins) = finish(x, cfg, fits.iter().map(|f| (f.scale, f.min)))?;
    Ok((
        q,
        QuantTrace {
            fits,
            clamped_scales,
            clamped_mins,
        },
    ))
}

/// The same pipeline with the subblock search replaced by the plain affine fit.
pub fn quantize_superblock_baseline(x: &SuperBlock, cfg: &KQuantConfig) -> Result<QuantizedSuperBlock> {
    check_layout(x, cfg)?;
    let params = x
        .subblocks()
        .map(|sub| affine_quant_base(sub, cfg).map(|f| (f.scale, f.min)))
        .collect::<Result<Vec<_>>>()?;
    finish(x, cfg, params.into_iter()).map(|(q, _, _)| q)
}

/// Absmax quantization of non-negative values to unsigned `maxq`-level codes.
fn absmax_unsigned(values: &[f64], maxq: u32) -> (f32, Vec<u8>) {
    let amax = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let d = (amax / maxq as f64) as f32;
    if !(d > 0.0) {
        return (0.0, vec![0; values.len()]);
    }
    let codes = values
        .iter()
        .map(|&v| (v / d as f64).round_ties_even().clamp(0.0, maxq as f64) as u8)
        .collect();
    (d, codes)
}

fn finish(
    x: &SuperBlock,
    cfg: &KQuantConfig,
    params: impl Iterator<Item = (f64, f64)>,
) -> Result<(QuantizedSuperBlock, usize, usize)> {
    let m = cfg.layout.m;
    let mut scales = Vec::with_capacity(m);
    let mut mins = Vec::with_capacity(m);
    let (mut clamped_scales, mut clamped_mins) = (0, 0);
    for (scale, min) in params {
        if scale < 0.0 {
            clamped_scales += 1;
        }
        scales.push(scale.max(0.0));
        if cfg.use_mins {
            let stored = -min;
            if stored < 0.0 {
                clamped_mins += 1;
            }
            mins.push(stored.max(0.0));
        }
    }
    let maxq = cfg.max_scale_code();
    let (d_scales, q_scales) = absmax_unsigned(&scales, maxq);
    let (d_mins, q_mins) = if cfg.use_mins {
        absmax_unsigned(&mins, maxq)
    } else {
        (0.0, vec![0; m])
    };

    let (lo, hi) = cfg.code_range();
    let mut codes = [0i8; QK_K];
    let n = cfg.layout.n;
    for (i, (dst, src)) in codes.chunks_exact_mut(n).zip(x.subblocks()).enumerate() {
        let scale = d_scales * q_scales[i] as f32;
        let min = d_mins * q_mins[i] as f32;
        if scale == 0.0 {
            continue;
        }
        for (c, &v) in dst.iter_mut().zip(src) {
            let q = ((v as f64 + min as f64) / scale as f64).round_ties_even();
            *c = q.clamp(lo as f64, hi as f64) as i8;
        }
    }
    let q = QuantizedSuperBlock::new(cfg.qtype, codes, q_scales, q_mins, d_scales, d_mins)?;
    Ok((q, clamped_scales, clamped_mins))
}

pub fn dequantize_superblock(q: &QuantizedSuperBlock) -> SuperBlock {
    SuperBlock::new(q.dequantize(), q.qtype().layout()).expect("dequantized values are finite")
}

/// Weighted objective of a reconstruction, using the importance the optimizer saw.
pub fn weighted_objective(x: &SuperBlock, deq: &[f32], cfg: &KQuantConfig) -> f64 {
    let w = effective_importance(x, cfg);
    x.values()
        .iter()
        .zip(deq)
        .zip(&w)
        .map(|((&xi, &di), &wi)| {
            let diff = xi as f64 - di as f64;
            wi as f64
                * match cfg.objective {
                    Objective::L1 => diff.abs(),
                    Objective::L2 => diff * diff,
                }
        })
        .sum()
}

fn block_views<'a>(
    data: &'a [f32],
    cfg: &'a KQuantConfig,
) -> Result<impl IndexedParallelIterator<Item = Result<SuperBlock>> + 'a> {
    crate::tensor_io::block::check_len(data.len())?;
    Ok(data
        .par_chunks_exact(QK_K)
        .map(move |c| SuperBlock::from_slice(c, cfg.layout)))
}

/// Quantizes a flat weight array superblock by superblock, in parallel.
pub fn quantize_tensor(data: &[f32], cfg: &KQuantConfig) -> Result<Vec<QuantizedSuperBlock>> {
    block_views(data, cfg)?.map(|b| quantize_superblock(&b?, cfg)).collect()
}

pub fn quantize_tensor_traced(data: &[f32], cfg: &KQuantConfig) -> Result<Vec<(QuantizedSuperBlock, QuantTrace)>> {
    block_views(data, cfg)?
        .map(|b| quantize_superblock_traced(&b?, cfg))
        .collect()
}

pub fn dequantize_tensor(blocks: &[QuantizedSuperBlock]) -> Vec<f32> {
    let mut out = vec![0.0f32; blocks.len() * QK_K];
    out.par_chunks_exact_mut(QK_K)
        .zip(blocks.par_iter())
        .for_each(|(dst, q)| q.dequantize_into(dst));
    out
}

/// Quantize-then-dequantize of a flat weight array.
pub fn fake_quantize(data: &[f32], cfg: &KQuantConfig) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; data.len()];
    crate::tensor_io::block::check_len(data.len())?;
    out.par_chunks_exact_mut(QK_K)
        .zip(data.par_chunks_exact(QK_K))
        .try_for_each(|(dst, src)| {
            let b = SuperBlock::from_slice(src, cfg.layout)?;
            quantize_superblock(&b, cfg)?.dequantize_into(dst);
            Ok::<_, Error>(())
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kquant::Layout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_block(rng: &mut ChaCha8Rng, layout: Layout) -> SuperBlock {
        let normal = rand_distr::Normal::new(0.0f32, 0.02).unwrap();
        let mut v = [0.0f32; QK_K];
        v.iter_mut().for_each(|x| *x = rng.sample(normal));
        SuperBlock::new(v, layout).unwrap()
    }

    #[test]
    fn zero_block() {
        for qt in QuantType::ALL {
            let cfg = qt.config();
            let b = SuperBlock::new([0.0; QK_K], cfg.layout).unwrap();
            let q = quantize_superblock(&b, &cfg).unwrap();
            assert!(q.codes().iter().all(|&c| c == 0));
            assert_eq!(q.d_scales(), 0.0);
            assert_eq!(q.d_mins(), 0.0);
            assert!(q.dequantize().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn invariants_hold_on_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for qt in QuantType::ALL {
            let cfg = qt.config();
            for _ in 0..50 {
                let b = gaussian_block(&mut rng, cfg.layout);
                let (q, trace) = quantize_superblock_traced(&b, &cfg).unwrap();
                // revalidate through the checked constructor
                QuantizedSuperBlock::new(
                    qt,
                    *q.codes(),
                    q.q_scales().to_vec(),
                    q.q_mins().to_vec(),
                    q.d_scales(),
                    q.d_mins(),
                )
                .unwrap();
                assert_eq!(trace.fits.len(), cfg.layout.m);
                assert_eq!(trace.clamped_scales, 0);
            }
        }
    }

    #[test]
    fn on_grid_block_recovers_exactly() {
        // build from a known (Q, scales, mins) tuple with power-of-two steps
        for qt in QuantType::ALL {
            let cfg = qt.config();
            let (lo, hi) = cfg.code_range();
            // symmetric codes keep the absmax fit exact
            let lo = if cfg.use_mins { lo } else { lo + 1 };
            let maxq = cfg.max_scale_code() as u8;
            let d_scales = 0.0078125f32;
            let d_mins = if cfg.use_mins { 0.015625f32 } else { 0.0 };
            let mut codes = [0i8; QK_K];
            for (k, c) in codes.iter_mut().enumerate() {
                *c = (lo + (k as i32 % (hi - lo + 1))) as i8;
            }
            // every subblock spans the full code range so the base fit is exact
            let n = cfg.layout.n;
            for sub in codes.chunks_exact_mut(n) {
                sub[0] = lo as i8;
                sub[n - 1] = hi as i8;
            }
            let q_scales = vec![maxq; cfg.layout.m];
            let q_mins = if cfg.use_mins {
                vec![maxq; cfg.layout.m]
            } else {
                vec![0; cfg.layout.m]
            };
            let src = QuantizedSuperBlock::new(qt, codes, q_scales, q_mins, d_scales, d_mins).unwrap();
            let x = dequantize_superblock(&src);
            let again = quantize_superblock(&x, &cfg).unwrap();
            assert_eq!(again.dequantize(), *x.values(), "{qt}");
        }
    }

    #[test]
    fn bits_order_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut prev = f64::INFINITY;
        for qt in QuantType::ALL {
            let cfg = qt.config();
            let mut total = 0.0;
            for _ in 0..200 {
                let b = gaussian_block(&mut rng, cfg.layout);
                let d = quantize_superblock(&b, &cfg).unwrap().dequantize();
                total += b.values().iter().zip(d).map(|(x, y)| (x - y).abs() as f64).sum::<f64>();
            }
            assert!(total < prev, "{qt}");
            prev = total;
        }
    }

    #[test]
    fn layout_mismatch_rejected() {
        let b = SuperBlock::new([0.0; QK_K], Layout { m: 16, n: 16 }).unwrap();
        assert!(quantize_superblock(&b, &QuantType::Q4K.config()).is_err());
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(matches!(
            quantize_tensor(&[0.0; 300], &QuantType::Q4K.config()),
            Err(Error::NotMultipleOf256 { remainder: 44, .. })
        ));
        let blocks = quantize_tensor(&[0.0; 512], &QuantType::Q4K.config()).unwrap();
        assert_eq!(blocks.len(), 2);
    }
}
