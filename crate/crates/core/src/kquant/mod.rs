//! k-quant superblock quantization.
//!
//! A superblock of 256 weights is split into `m` subblocks of `n` weights.
//! Each subblock gets an importance-weighted scale (and, for Q2_K/Q4_K/Q5_K,
//! an offset) found by perturbing the zero-shot fit and refitting by weighted
//! least squares. The per-subblock parameters are then absmax-quantized once
//! more per superblock, and the weights are rounded against the resulting
//! parameters.

pub mod codec;
mod config;
mod subblock;
mod superblock;

pub use codec::{block_len, decode_kqb, encode_kqb, pack_block, read_kqb, unpack_block, write_kqb};
pub use config::{Importance, KQuantConfig, Layout, Objective, QuantType, UpdateRule, DEFAULT_GRID_STEPS};
pub use subblock::{
    affine_quant_base, calc_importance, effective_importance, quantize_subblock, regression_scale_min, subblock_error,
    AffineFit, SubblockFit,
};
pub use superblock::{
    dequantize_superblock, dequantize_tensor, fake_quantize, quantize_superblock, quantize_superblock_baseline,
    quantize_superblock_traced, quantize_tensor, quantize_tensor_traced, weighted_objective, QuantTrace,
    QuantizedSuperBlock,
};
