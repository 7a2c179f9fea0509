//! Run configuration: data dimensions, model, training and output paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{default_response, DegradationSpec, SynthDims};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::Schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub hs_bands: usize,
    pub ms_bands: usize,
    pub sampling_factor: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { height: 32, width: 32, hs_bands: 8, ms_bands: 3, sampling_factor: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub samples: usize,
    pub endmembers: usize,
    pub noise_sigma: f64,
    /// Gaussian anti-aliasing blur before decimation (box-free point sampling when false).
    pub blur: bool,
    /// `c × C` spectral response; evenly spaced triangular bands when absent.
    pub response: Option<Vec<Vec<f64>>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 10, endmembers: 5, noise_sigma: 0.0, blur: true, response: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    /// Fraction of training LR-MSI pixels used to fit k-means centroids.
    pub kmeans_fraction: f64,
    pub kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_epochs: 200,
            phase2_epochs: 10,
            learning_rate: 1e-3,
            schedule: Schedule::default(),
            kmeans_fraction: 0.25,
            kmeans_iters: 50,
        }
    }
}

/// Output locations, relative to the run's base directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: "dataset".into(), checkpoints: "checkpoints".into(), reports: "reports".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: Dims,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// The published setting: `K = 4`, 128 features, 10 clusters, lr 1e-4,
    /// 1000 + 200 epochs, 31 bands at scale 4.
    pub fn paper() -> Self {
        let mut cfg = Self {
            dims: Dims { height: 128, width: 128, hs_bands: 31, ms_bands: 3, sampling_factor: 4 },
            ..Self::default()
        };
        cfg.model.stages = 4;
        cfg.model.features = 128;
        cfg.model.clusters = 10;
        cfg.training.learning_rate = 1e-4;
        cfg.training.phase1_epochs = 1000;
        cfg.training.phase2_epochs = 200;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The model configuration with band counts and sampling factor filled in from `dims`.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.ms_bands = self.dims.ms_bands;
        m.hs_bands = self.dims.hs_bands;
        m.sampling_factor = self.dims.sampling_factor;
        m
    }

    pub fn synth_dims(&self) -> SynthDims {
        SynthDims {
            height: self.dims.height,
            width: self.dims.width,
            bands: self.dims.hs_bands,
            endmembers: self.data.endmembers,
        }
    }

    pub fn response(&self) -> Vec<Vec<f64>> {
        self.data.response.clone().unwrap_or_else(|| default_response(self.dims.ms_bands, self.dims.hs_bands))
    }

    pub fn degradation(&self) -> Result<DegradationSpec> {
        let (s, r, n) = (self.dims.sampling_factor, self.response(), self.data.noise_sigma);
        if self.data.blur {
            DegradationSpec::gaussian(s, r, n)
        } else {
            DegradationSpec::no_blur(s, r, n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.height == 0 || d.width == 0 || d.hs_bands == 0 || d.ms_bands == 0 || d.sampling_factor == 0 {
            return Err(Error::Config("dims must all be positive".into()));
        }
        if !d.height.is_multiple_of(d.sampling_factor) || !d.width.is_multiple_of(d.sampling_factor) {
            return Err(Error::Config(format!(
                "sampling factor {} does not divide {}x{}",
                d.sampling_factor, d.height, d.width
            )));
        }
        if let Some(r) = &self.data.response {
            if r.len() != d.ms_bands || r.iter().any(|row| row.len() != d.hs_bands) {
                return Err(Error::Config(format!("response must be {}x{}", d.ms_bands, d.hs_bands)));
            }
        }
        if self.data.samples < 3 {
            return Err(Error::Config("need at least 3 samples for a train/val/test split".into()));
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(t.kmeans_fraction > 0.0 && t.kmeans_fraction <= 1.0) {
            return Err(Error::Config("kmeans_fraction must lie in (0, 1]".into()));
        }
        t.schedule.validate()?;
        self.degradation()?;
        self.model_config().validate()
    }

    /// Resolves a configured path against `base`.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}
