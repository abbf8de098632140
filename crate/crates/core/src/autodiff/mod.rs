//! Minimal reverse-mode automatic differentiation on dense f64 tensors.
//!
//! Parameters live in a [`ParamStore`]; each forward pass materializes them as
//! leaves on a fresh [`Tape`]. A leaf can be created detached, which keeps the
//! forward value bit-identical while routing zero gradient to the parameter.

mod array;
mod params;
mod tape;

pub use array::Array;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
