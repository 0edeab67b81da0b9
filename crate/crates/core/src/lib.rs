#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod decay;
pub mod error;
pub mod model;
pub mod nls;
pub mod photophysics;
pub mod report;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};
