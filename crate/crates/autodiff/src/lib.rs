//! Reverse-mode automatic differentiation over small dense arrays.
//!
//! The operation set is deliberately closed: affine maps, elementwise
//! activations, concatenation and slicing, gathers/scatters, a grouped
//! softmax, a fused LSTM cell and binary cross-entropy. That is everything a
//! relational graph propagation model with sequence-encoded text nodes needs.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod real;
pub mod tape;

pub use error::{AutodiffError, Result};
pub use nn::{ffn, seq_encode, LstmWeights};
pub use params::{AdamConfig, GradBuffer, Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Tape, Var, BCE_EPSILON};
