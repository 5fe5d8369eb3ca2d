//! Attention encoder-decoder with a refinement/adjustment LSTM decoder for
//! dialogue-act conditioned text generation.

pub mod autodiff;
pub mod corpus;
mod error;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
