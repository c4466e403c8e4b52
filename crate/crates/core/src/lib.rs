// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod autodiff;
pub mod corpus;
pub mod ctc;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::NoiseLabel;
