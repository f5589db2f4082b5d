//! Minimal reverse-mode automatic differentiation: dense tensors, a
//! computation tape with the primitives the network needs, finite-difference
//! verification, Adam, and the `ASTN1` checkpoint container.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry,
    CHECKPOINT_MAGIC,
};
pub use gradcheck::{
    finite_difference_check, finite_difference_check_with, relative_error, GradCheckReport, DEFAULT_EPS,
};
pub use tape::{bce_value, leaky, sigmoid, Tape, Var, PROB_CLAMP};
pub use tensor::{Scalar, Tensor};

/// Elementwise LeakyReLU on a plain slice.
pub fn leaky_relu<F: Scalar>(x: &[F], slope: F) -> Vec<F> {
    x.iter().map(|&v| leaky(v, slope)).collect()
}
