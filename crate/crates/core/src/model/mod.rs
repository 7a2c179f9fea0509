//! The three unfolded solvers and the attention post-processor.

pub mod attn;
pub mod config;
pub mod fusion;
pub mod kmeans;
pub mod pipeline;
pub mod sr;
pub mod ssr;

pub use config::{AttnConfig, ClusterMode, ModelConfig, ResidualSign, UpSteps, Upsampler};
pub use pipeline::{forward, init_params, signature, Outputs};
