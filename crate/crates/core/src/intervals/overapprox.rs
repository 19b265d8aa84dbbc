use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IntervalSet;
use crate::error::{Error, Result};
use crate::kquant::{quantize_superblock, KQuantConfig, QuantType};
use crate::tensor_io::block::check_len;
use crate::tensor_io::{SeedSpec, SuperBlock, QK_K};

/// How often perturbed weights dequantize to something other than the
/// unperturbed weights do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverApproxReport {
    pub qtype: QuantType,
    pub trials: u32,
    pub seed: u64,
    pub weights: usize,
    /// Changed dequantized values summed over all trials.
    pub changed: u64,
    pub fraction: f64,
    pub per_trial: Vec<f64>,
}

/// Samples every weight uniformly from its interval, re-quantizes, and
/// reports the fraction of dequantized values that differ from the clean
/// reconstruction, averaged over `trials`.
///
/// Draws for superblock `b` of trial `t` come from `seed.rng(b, t)`, so the
/// result does not depend on thread count.
pub fn overapprox_fraction(
    iv: &IntervalSet,
    cfg: &KQuantConfig,
    trials: u32,
    seed: SeedSpec,
) -> Result<OverApproxReport> {
    let bounds = iv.bounds();
    flip_rate(iv.origin(), cfg, trials, seed, |rng, i, w| {
        let b = bounds[i];
        if b.lo < b.hi {
            rng.random_range(b.lo..=b.hi)
        } else {
            w
        }
    })
}

/// Same measurement for isotropic Gaussian noise of standard deviation
/// `sigma`. Draws are shared across `sigma` values for a fixed seed, so a
/// sweep over `sigma` compares like with like.
pub fn noise_defense_eval(
    data: &[f32],
    cfg: &KQuantConfig,
    sigma: f64,
    trials: u32,
    seed: SeedSpec,
) -> Result<OverApproxReport> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    flip_rate(data, cfg, trials, seed, |rng, _, w| {
        let z: f64 = rng.sample(StandardNormal);
        (w as f64 + sigma * z) as f32
    })
}

fn flip_rate<F>(data: &[f32], cfg: &KQuantConfig, trials: u32, seed: SeedSpec, perturb: F) -> Result<OverApproxReport>
where
    F: Fn(&mut ChaCha8Rng, usize, f32) -> f32 + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    check_len(data.len())?;
    let clean = data
        .par_chunks_exact(QK_K)
        .map(|c| Ok(quantize_superblock(&SuperBlock::from_slice(c, cfg.layout)?, cfg)?.dequantize()))
        .collect::<Result<Vec<_>>>()?;

    let mut per_trial = Vec::with_capacity(trials as usize);
    let mut changed = 0u64;
    for t in 0..trials {
        let counts = data
            .par_chunks_exact(QK_K)
            .zip(clean.par_iter())
            .enumerate()
            .map(|(b, (src, reference))| {
                let mut rng = seed.rng(b as u64, t as u64);
                let mut noisy = [0.0f32; QK_K];
                for (j, (dst, &w)) in noisy.iter_mut().zip(src).enumerate() {
                    *dst = perturb(&mut rng, b * QK_K + j, w);
                }
                let x = SuperBlock::new(noisy, cfg.layout)?;
                let deq = quantize_superblock(&x, cfg)?.dequantize();
                Ok(deq.iter().zip(reference).filter(|(a, b)| a != b).count() as u64)
            })
            .collect::<Result<Vec<u64>>>()?;
        let n: u64 = counts.iter().sum();
        changed += n;
        per_trial.push(n as f64 / data.len() as f64);
    }
    Ok(OverApproxReport {
        qtype: cfg.qtype,
        trials,
        seed: seed.seed,
        weights: data.len(),
        changed,
        fraction: changed as f64 / (data.len() as f64 * trials as f64),
        per_trial,
    })
}
