use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A hyperspectral or multispectral image `[H, W, C]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageCube {
    data: Tensor<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl ImageCube {
    /// Validates and clamps. Non-finite values are rejected rather than clamped.
    pub fn new(data: Tensor<f32>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let (_, _, c) = data.hwc()?;
        if let Some(i) = data.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest(format!("non-finite value at flat index {i}")));
        }
        if let Some(wl) = &wavelengths {
            if wl.len() != c {
                return Err(Error::Ingest(format!("{} wavelengths for {c} bands", wl.len())));
            }
            if wl.windows(2).any(|p| p[1] <= p[0]) || wl.iter().any(|v| !v.is_finite()) {
                return Err(Error::Ingest("wavelengths must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { data: data.map(|v| v.clamp(0.0, 1.0)), wavelengths })
    }

    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        Self::new(data, None)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data.at3(y, x, c)
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let c = self.channels();
        let start = (y * self.width() + x) * c;
        &self.data.data()[start..start + c]
    }
}
