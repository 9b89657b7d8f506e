//! Masked 2D transformer pre-training and zero-shot forecasting for trip
//! time series: series indexed by event date and by leading time before
//! the event.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod frame;
pub mod mask;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
