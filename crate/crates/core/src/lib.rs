//! k-quant superblock quantization and quantization-preserving interval analysis.

// `!(x > 0.0)` is used on purpose so NaN takes the degenerate branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod error;
pub mod intervals;
pub mod kquant;
pub mod tensor_io;
pub mod zeroshot;

pub use error::{Error, Result};
pub use intervals::{FreezeStrategy, Interval, IntervalSet};
pub use kquant::{KQuantConfig, QuantType, QuantizedSuperBlock};
pub use tensor_io::{SuperBlock, Tensor};
