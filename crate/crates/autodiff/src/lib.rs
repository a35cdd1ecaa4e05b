//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! The op set is what small recurrent actor-critic networks need: matmul,
//! bias-add, pointwise activations, column slicing/concatenation, reductions,
//! an LSTM cell built from those primitives, and a stop-gradient node whose
//! backward pass transmits exactly zero.

pub mod adam;
pub mod error;
pub mod kernels;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use error::{AdError, Result};
pub use lstm::{lstm_cell, lstm_step, LstmState, LstmVars};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// `x·w + b` for `x: [m,i]`, `w: [i,o]`, `b: [o]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}
