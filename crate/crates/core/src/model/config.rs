use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the spatial solver maps a low-resolution residual back to high resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampler {
    /// Transposed convolutions followed by a 3×3 low-pass convolution.
    Forward,
    /// `Forward` plus a learned kernel applied to the bicubic upsampling of the residual.
    Bp,
    /// The exact adjoint of the downsampling chain (no parameters of its own).
    Adjoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpSteps {
    /// One stride-`s` step.
    Single,
    /// One stride-`p` step per prime factor of `s`.
    Progressive,
}

/// Sign applied to the back-projected residual in the spatial stage update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSign {
    /// `u - τ·Up(D(u) - f)`, a gradient step on `½‖D(u) - f‖²`.
    Descent,
    /// `u + τ·Up(D(u) - f)`, the sign of the back-projection recursion as printed.
    Additive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    Learned,
    Kmeans,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttnConfig {
    pub window: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub topk_ratio: f64,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self { window: 11, patch: 11, embed_dim: 8, heads: 4, topk_ratio: 0.1 }
    }
}

impl AttnConfig {
    /// Number of kept neighbours, `ceil(ratio · w²)`.
    pub fn topk(&self) -> usize {
        let n = self.window * self.window;
        // Guard against 0.1·121 = 12.100000000000001 style rounding noise.
        (((self.topk_ratio * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.patch.is_multiple_of(2) {
            return Err(Error::Config("attention window and patch must be odd".into()));
        }
        if self.embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("attention needs embed_dim >= 1 and heads >= 1".into()));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::Config("topk_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Architecture of the whole pipeline. Band counts and the sampling factor
/// come from the run's data dimensions and are not part of the serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Multispectral band count `c`.
    #[serde(skip)]
    pub ms_bands: usize,
    /// Hyperspectral band count `C`.
    #[serde(skip)]
    pub hs_bands: usize,
    #[serde(skip)]
    pub sampling_factor: usize,
    /// Unfolded stages `K` per solver.
    pub stages: usize,
    /// Width of the residual blocks inside the proximity networks.
    pub features: usize,
    pub res_blocks: usize,
    pub clusters: usize,
    pub cluster_mode: ClusterMode,
    /// Hidden width of the cluster MLPs; `2·max(c, C)` when absent.
    pub mlp_hidden: Option<usize>,
    pub rcab_reduction: usize,
    pub sr_upsampler: Upsampler,
    pub sr_steps: UpSteps,
    pub sr_residual_sign: ResidualSign,
    pub tau_init: f64,
    pub fusion_epsilon: f64,
    pub attn: AttnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ms_bands: 3,
            hs_bands: 8,
            sampling_factor: 2,
            stages: 2,
            features: 16,
            res_blocks: 3,
            clusters: 3,
            cluster_mode: ClusterMode::Learned,
            mlp_hidden: None,
            rcab_reduction: 4,
            sr_upsampler: Upsampler::Bp,
            sr_steps: UpSteps::Progressive,
            sr_residual_sign: ResidualSign::Descent,
            tau_init: 0.1,
            fusion_epsilon: 1e-6,
            attn: AttnConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Effective number of clusters (`none` forces one).
    pub fn effective_clusters(&self) -> usize {
        match self.cluster_mode {
            ClusterMode::None => 1,
            _ => self.clusters,
        }
    }

    pub fn hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(2 * self.ms_bands.max(self.hs_bands))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ms_bands", self.ms_bands),
            ("hs_bands", self.hs_bands),
            ("sampling_factor", self.sampling_factor),
            ("stages", self.stages),
            ("features", self.features),
            ("clusters", self.clusters),
            ("rcab_reduction", self.rcab_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.mlp_hidden == Some(0) {
            return Err(Error::Config("mlp_hidden must be at least 1".into()));
        }
        if self.fusion_epsilon.is_nan() || self.fusion_epsilon <= 0.0 {
            return Err(Error::Config("fusion_epsilon must be positive".into()));
        }
        self.attn.validate()
    }

    /// Checks that an `H×W` high-resolution grid is compatible with the sampling factor.
    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let s = self.sampling_factor;
        if !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(Error::Config(format!("sampling factor {s} does not divide {height}x{width}")));
        }
        Ok(())
    }
}
