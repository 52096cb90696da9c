// Range checks are written as `!(x >= lo)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod channel;
pub mod cli;
pub mod container;
pub mod decoder;
pub mod dsp;
pub mod lexicon;
pub mod lm;
pub mod matrix;
pub mod pipeline;
pub mod recognizer;
pub mod separator;
pub mod service;

pub use matrix::Matrix;
