//! Minimal reverse-mode differentiation for multilayer perceptrons.

mod adam;
pub mod check;
mod matrix;
mod net;
mod tape;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use net::{gradients, init_scale, loss_value, Activation, LossSpec, NetGrads, NetParams, NetVars, Parameters, Primitive, Reduce};
pub use tape::{Gradients, Tape, Var};
