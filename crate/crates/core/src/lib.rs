// validation uses `!(x > 0.0)` on purpose so NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod pipeline;
pub mod repr;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
