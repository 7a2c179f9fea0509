//! The acquisition model: band integration, low-pass blur, decimation and noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ImageCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything needed to simulate the sensors from a reference HR-HSI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub sampling_factor: usize,
    /// Odd square kernel, row-major, summing to one.
    pub blur_kernel: Vec<f64>,
    pub blur_size: usize,
    /// `[c][C]` spectral response, non-negative rows summing to one.
    pub response: Vec<Vec<f64>>,
    pub noise_sigma: f64,
}

impl DegradationSpec {
    /// Gaussian blur with std `s/2` on a `(2s+1)²` support and the given response.
    pub fn gaussian(sampling_factor: usize, response: Vec<Vec<f64>>, noise_sigma: f64) -> Result<Self> {
        let s = sampling_factor;
        let size = 2 * s + 1;
        let std = s as f64 / 2.0;
        let r = s as isize;
        let mut k: Vec<f64> = (-r..=r)
            .flat_map(|y| (-r..=r).map(move |x| (-((x * x + y * y) as f64) / (2.0 * std * std)).exp()))
            .collect();
        let total: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
        let spec = Self { sampling_factor: s, blur_kernel: k, blur_size: size, response, noise_sigma };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity blur: a 1×1 kernel.
    pub fn no_blur(sampling_factor: usize, response: Vec<Vec<f64>>, noise_sigma: f64) -> Result<Self> {
        let spec = Self { sampling_factor, blur_kernel: vec![1.0], blur_size: 1, response, noise_sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_factor == 0 {
            return Err(Error::Config("sampling factor must be positive".into()));
        }
        if self.blur_size.is_multiple_of(2) || self.blur_kernel.len() != self.blur_size * self.blur_size {
            return Err(Error::Config("blur kernel must be odd and square".into()));
        }
        if (self.blur_kernel.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("blur kernel must sum to 1".into()));
        }
        let bands = self.response.first().map_or(0, |r| r.len());
        if bands == 0 || self.response.iter().any(|r| r.len() != bands) {
            return Err(Error::Config("spectral response must be a non-empty rectangular matrix".into()));
        }
        for (i, row) in self.response.iter().enumerate() {
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Config(format!("spectral response row {i} has negative entries")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("spectral response row {i} does not sum to 1")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn ms_bands(&self) -> usize {
        self.response.len()
    }

    pub fn hs_bands(&self) -> usize {
        self.response[0].len()
    }
}

/// Broad Gaussian-shaped band responses spread evenly over `hs` bands, row-normalised.
pub fn default_response(ms: usize, hs: usize) -> Vec<Vec<f64>> {
    let width = (hs as f64 / ms as f64).max(1.0);
    (0..ms)
        .map(|m| {
            let centre = (m as f64 + 0.5) * hs as f64 / ms as f64 - 0.5;
            let row: Vec<f64> = (0..hs)
                .map(|b| {
                    let d = (b as f64 - centre) / width;
                    (-0.5 * d * d).exp()
                })
                .collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

/// Per-pixel band integration `F_j = R · G_j`, clamped to `[0, 1]`.
pub fn spectral_degrade(cube: &ImageCube, response: &[Vec<f64>]) -> Result<ImageCube> {
    let (h, w, big_c) = cube.dims();
    if response.iter().any(|r| r.len() != big_c) || response.is_empty() {
        return Err(Error::Shape(format!(
            "response has {} columns, cube has {big_c} bands",
            response.first().map_or(0, |r| r.len())
        )));
    }
    let c = response.len();
    let mut out = Vec::with_capacity(h * w * c);
    for px in cube.tensor().data().chunks_exact(big_c) {
        for row in response {
            let v: f64 = row.iter().zip(px).map(|(&r, &g)| r * g as f64).sum();
            out.push(v as f32);
        }
    }
    ImageCube::new(Tensor::from_vec(&[h, w, c], out)?, None)
}

/// Per-band blur (zero padding), decimation from offset 0, additive Gaussian noise, clamp.
pub fn spatial_degrade(cube: &ImageCube, spec: &DegradationSpec, rng: &mut impl Rng) -> Result<ImageCube> {
    let (h, w, c) = cube.dims();
    let s = spec.sampling_factor;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("sampling factor {s} does not divide {h}x{w}")));
    }
    let (ho, wo) = (h / s, w / s);
    let k = spec.blur_size;
    let r = (k / 2) as isize;
    let src = cube.tensor().data();
    let mut out = vec![0f64; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let (cy, cx) = ((oy * s) as isize, (ox * s) as isize);
            let dst = &mut out[(oy * wo + ox) * c..][..c];
            for ky in 0..k {
                let iy = cy + ky as isize - r;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = cx + kx as isize - r;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let wgt = spec.blur_kernel[ky * k + kx];
                    let p = &src[((iy as usize) * w + ix as usize) * c..][..c];
                    for (d, &v) in dst.iter_mut().zip(p) {
                        *d += wgt * v as f64;
                    }
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        out.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    let data = out.into_iter().map(|v| v as f32).collect();
    ImageCube::new(Tensor::from_vec(&[ho, wo, c], data)?, None)
}

/// One training example: LR-MSI `f`, HR-MSI `F`, LR-HSI `g`, HR-HSI `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadruple {
    pub lr_msi: ImageCube,
    pub hr_msi: ImageCube,
    pub lr_hsi: ImageCube,
    pub hr_hsi: ImageCube,
}

/// Simulates both sensors from `hr_hsi`. The LR-MSI is obtained by spatially
/// degrading the HR-MSI; with zero noise this equals spectrally degrading the LR-HSI.
pub fn make_quadruple(hr_hsi: &ImageCube, spec: &DegradationSpec, rng: &mut impl Rng) -> Result<Quadruple> {
    spec.validate()?;
    let hr_msi = spectral_degrade(hr_hsi, &spec.response)?;
    let lr_hsi = spatial_degrade(hr_hsi, spec, rng)?;
    let lr_msi = spatial_degrade(&hr_msi, spec, rng)?;
    Ok(Quadruple { lr_msi, hr_msi, lr_hsi, hr_hsi: hr_hsi.clone() })
}
