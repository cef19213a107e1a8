//! Waterline detection toolkit: a dense tensor core with hand-written
//! reverse-mode gradients, a channel-shuffle classifier and adversarial
//! sample pair, a sliding-window peephole detector, distance-thresholded
//! evaluation metrics, deterministic synthetic scene generation, and a CLI.

pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod img;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod util;
pub mod weights;

pub mod cli;

pub use error::{Error, Result};
pub use tensor::Tensor;
