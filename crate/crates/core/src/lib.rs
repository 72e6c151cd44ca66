//! Late fusion of real-valued voters by a quadratic program that minimizes
//! the C-bound, with optional pairwise ranking constraints.

pub mod baselines;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mincq;
pub mod model_selection;
pub mod pipeline;
pub mod qp;
pub mod ranking;
pub mod synth;
pub mod voters;

mod linalg;

pub use error::{Error, Result};
