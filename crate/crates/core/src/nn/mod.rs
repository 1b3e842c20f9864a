//! Dense-network substrate: flat parameter storage, tape-based reverse mode,
//! MSE loss and Adam.

mod adam;
mod loss;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use loss::mse_loss;
pub use mlp::{glorot_uniform, Activation, DenseLayer, Mlp};
pub use tape::{affine, dot, Tape, Var};
