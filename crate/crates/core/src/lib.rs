//! Unfolded spatio-spectral super-resolution.
//!
//! A low-resolution multispectral image is lifted to a high-resolution
//! hyperspectral cube by three unfolded proximal-gradient solvers (spatial,
//! spectral and fusion), optionally followed by a windowed top-k attention
//! post-processor. The crate also carries the small reverse-mode autodiff
//! engine the solvers are written in, an acquisition simulator, a two-phase
//! trainer and the evaluation metrics.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod run;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
