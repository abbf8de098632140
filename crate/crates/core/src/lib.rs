//! Few-shot fine-grained face-to-cartoon translation.
//!
//! A two-stage unpaired image translator: a basic encoder-decoder GAN trained
//! on a data-rich group, then group-specific encoder/decoder branches grafted
//! onto the shared core and trained with selective backpropagation so that
//! few-shot groups never update the shared representation.

pub mod autodiff;
pub mod branch;
pub mod data;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod train;

pub use error::{Error, Result};
