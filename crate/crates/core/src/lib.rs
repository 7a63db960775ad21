//! Stagewise forecasting engine: a shared temporal mapping, per-channel
//! fine-tuning initialized from it, and a low-rank cross-variable residual,
//! all trained with analytic gradients and partial reversible instance
//! normalization.

pub mod backbone;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod norm;
pub mod optim;
pub mod param;
pub mod real;
pub mod residual;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Result, StairError};
