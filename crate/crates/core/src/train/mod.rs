//! Optimisation, checkpoints, and the non-learned baseline.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod schedule;
pub mod trainer;

pub use adam::Adam;
pub use baseline::{bicubic_up, Baseline, SpectralRegression};
pub use checkpoint::{backbone_digest, params_digest, Checkpoint};
pub use schedule::{loss_phase1, Alphas, Schedule};
pub use trainer::{predict, train_phase1, train_phase2, History, Outcome, Prediction, Sample, Trainer};
