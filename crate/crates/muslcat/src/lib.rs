//! Raw-waveform music tagging with convolutional attention networks.
//!
//! The crate implements two multi-label taggers that consume 3 s windows of
//! 16 kHz audio directly:
//!
//! * `MuSLCAT`: two convolutional attention branches (a wide-stride low
//!   branch and a fine-stride high branch) whose multi-level features are
//!   fused and fed to a relative-attention transformer encoder with a
//!   classification token.
//! * `MuSLCAN`: the same two-branch frontend recalibrated by a single
//!   attention-augmented convolution block, for a fraction of the weights.
//!
//! Everything is implemented from first principles on a small f64 tensor
//! type, with hand-derived backward passes that are finite-difference
//! checked. See `crates/muslcat/examples/` for runnable tours of each
//! capability and `src/cli.rs` for the command-line entry points.

pub mod attention;
pub mod audio;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
