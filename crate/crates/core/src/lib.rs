//! Stroke-subset selection for sketch-based image retrieval.

// config checks write `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod gallery;
pub mod nn;
pub mod oracle;
pub mod ppo;
pub mod selector;
pub mod sketch;
pub mod synth;

pub use error::{Error, Result};
