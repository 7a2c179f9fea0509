//! Cube ingestion, the acquisition simulator and on-disk formats.

mod bands;
mod cube;
pub mod degrade;
pub mod hsc;
pub mod synth;

pub use bands::import_band_directory;
pub use cube::ImageCube;
pub use degrade::{default_response, make_quadruple, spatial_degrade, spectral_degrade, DegradationSpec, Quadruple};
pub use hsc::{load_hsc, save_hsc};
pub use synth::{synth_dataset, DatasetManifest, Split, SynthDims};
