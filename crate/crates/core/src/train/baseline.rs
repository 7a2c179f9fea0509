//! Non-learned reference: bicubic spatial upsampling followed by an affine
//! per-pixel spectral regression fitted by least squares on training pixels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{bicubic_matrix, separable_apply};
use crate::tensor::Tensor;
use crate::train::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralRegression {
    /// `[(c + 1), C]`: one row per input band, then the offset row.
    pub weights: DMatrix<f64>,
}

pub fn bicubic_up(x: &Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = x.hwc()?;
    let (oh, ow) = (h * scale, w * scale);
    let out = separable_apply(x.data(), h, w, c, &bicubic_matrix::<f32>(h, oh), oh, &bicubic_matrix::<f32>(w, ow), ow);
    Tensor::from_vec(&[oh, ow, c], out)
}

impl SpectralRegression {
    /// Fits `y ≈ [x, 1]·W` over paired `[H, W, c]` / `[H, W, C]` images.
    pub fn fit(pairs: &[(Tensor<f32>, Tensor<f32>)]) -> Result<Self> {
        let (c, big_c) = match pairs.first() {
            Some((x, y)) => (x.hwc()?.2, y.hwc()?.2),
            None => return Err(Error::Config("spectral regression needs at least one pair".into())),
        };
        let d = c + 1;
        let mut ata = DMatrix::<f64>::zeros(d, d);
        let mut aty = DMatrix::<f64>::zeros(d, big_c);
        for (x, y) in pairs {
            let ((xh, xw, xc), (yh, yw, yc)) = (x.hwc()?, y.hwc()?);
            if (xh, xw, xc, yc) != (yh, yw, c, big_c) {
                return Err(Error::Shape(format!("regression pair {:?} / {:?}", x.shape(), y.shape())));
            }
            for (px, py) in x.data().chunks_exact(c).zip(y.data().chunks_exact(big_c)) {
                let a = DVector::from_iterator(d, px.iter().map(|&v| v as f64).chain(std::iter::once(1.0)));
                ata += &a * a.transpose();
                for (j, &t) in py.iter().enumerate() {
                    for i in 0..d {
                        aty[(i, j)] += a[i] * t as f64;
                    }
                }
            }
        }
        let weights = ata
            .lu()
            .solve(&aty)
            .ok_or_else(|| Error::Numerical("spectral regression: singular normal equations".into()))?;
        Ok(Self { weights })
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w, c) = x.hwc()?;
        if c + 1 != self.weights.nrows() {
            return Err(Error::Shape(format!("regression expects {} bands, got {c}", self.weights.nrows() - 1)));
        }
        let big_c = self.weights.ncols();
        let mut out = Vec::with_capacity(h * w * big_c);
        for px in x.data().chunks_exact(c) {
            for j in 0..big_c {
                let mut v = self.weights[(c, j)];
                for (i, &xi) in px.iter().enumerate() {
                    v += self.weights[(i, j)] * xi as f64;
                }
                out.push(v as f32);
            }
        }
        Tensor::from_vec(&[h, w, big_c], out)
    }
}

/// Baseline fitted on `train` (bicubic LR-MSI → HR-HSI pixels).
pub struct Baseline {
    pub scale: usize,
    pub regression: SpectralRegression,
}

impl Baseline {
    pub fn fit(train: &[Sample], scale: usize) -> Result<Self> {
        let pairs =
            train.iter().map(|s| Ok((bicubic_up(&s.lr_msi, scale)?, s.hr_hsi.clone()))).collect::<Result<Vec<_>>>()?;
        Ok(Self { scale, regression: SpectralRegression::fit(&pairs)? })
    }

    pub fn predict(&self, lr_msi: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.regression.apply(&bicubic_up(lr_msi, self.scale)?)
    }
}
