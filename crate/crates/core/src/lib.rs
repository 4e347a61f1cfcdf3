#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod cli;
pub mod datapipe;
pub mod diffcore;
pub mod error;
pub mod inference;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod postproc;
pub mod trainer;

pub use error::{Error, Result};
