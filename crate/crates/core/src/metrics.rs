//! Reference-based quality metrics for `[H, W, C]` cubes with a `[0, 1]` range.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn pair<T: Real>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<(usize, usize, usize)> {
    x.check_same_shape(reference)?;
    x.hwc()
}

pub fn psnr<T: Real>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    x.check_same_shape(reference)?;
    let n = x.len().max(1) as f64;
    let mse = x.data().iter().zip(reference.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n;
    // NaN propagates so a diverged output never ranks as best.
    Ok(if mse.is_nan() {
        f64::NAN
    } else if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

/// Band-averaged SSIM with a uniform window of `min(8, H, W)` pixels, stride 1.
pub fn ssim<T: Real>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let (h, w, c) = pair(x, reference)?;
    let win = SSIM_WINDOW.min(h).min(w);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let npx = (win * win) as f64;
    let mut total = 0.0;
    for band in 0..c {
        let at = |t: &Tensor<T>, i: usize, j: usize| t.data()[(i * w + j) * c + band].as_f64();
        let mut acc = 0.0;
        let mut count = 0usize;
        for i0 in 0..=h - win {
            for j0 in 0..=w - win {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in i0..i0 + win {
                    for j in j0..j0 + win {
                        let (a, b) = (at(x, i, j), at(reference, i, j));
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / npx, sy / npx);
                let vx = sxx / npx - mx * mx;
                let vy = syy / npx - my * my;
                let cxy = sxy / npx - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / c as f64)
}

/// Mean spectral angle in degrees; pixels where either spectrum has norm < 1e-8 are skipped.
pub fn sam<T: Real>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let (_, _, c) = pair(x, reference)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in x.data().chunks_exact(c).zip(reference.data().chunks_exact(c)) {
        let norm = |v: &[T]| v.iter().map(|p| p.as_f64().powi(2)).sum::<f64>().sqrt();
        let (na, nb) = (norm(a), norm(b));
        if na < 1e-8 || nb < 1e-8 {
            continue;
        }
        // Half-angle form: exact zero for parallel spectra, unlike acos near 1.
        let (mut diff, mut total) = (0.0, 0.0);
        for (&p, &q) in a.iter().zip(b) {
            let (p, q) = (p.as_f64() / na, q.as_f64() / nb);
            diff += (p - q).powi(2);
            total += (p + q).powi(2);
        }
        sum += (2.0 * diff.sqrt().atan2(total.sqrt())).to_degrees();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `100·(1/s)·sqrt(mean_i (RMSE_i / μ_i)²)`; all-zero reference bands are excluded.
pub fn ergas<T: Real>(x: &Tensor<T>, reference: &Tensor<T>, scale: usize) -> Result<f64> {
    let (h, w, c) = pair(x, reference)?;
    if scale == 0 {
        return Err(Error::Config("ERGAS needs a positive scale".into()));
    }
    let n = (h * w) as f64;
    let (mut acc, mut used) = (0.0, 0usize);
    for band in 0..c {
        let (mut se, mut mean) = (0.0, 0.0);
        for px in 0..h * w {
            let (a, b) = (x.data()[px * c + band].as_f64(), reference.data()[px * c + band].as_f64());
            se += (a - b).powi(2);
            mean += b;
        }
        mean /= n;
        if mean == 0.0 {
            log::warn!("ERGAS: reference band {band} is all zero; excluded");
            continue;
        }
        acc += (se / n) / (mean * mean);
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { 100.0 / scale as f64 * (acc / used as f64).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
    pub ergas: f64,
}

impl Metrics {
    pub fn compute<T: Real>(x: &Tensor<T>, reference: &Tensor<T>, scale: usize) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, reference)?,
            ssim: ssim(x, reference)?,
            sam: sam(x, reference)?,
            ergas: ergas(x, reference, scale)?,
        })
    }

    /// Table style: `PSNR / SSIM / SAM / ERGAS` at 2, 4, 2 and 2 decimals.
    pub fn table_row(&self) -> String {
        format!("{:.2} / {:.4} / {:.2} / {:.2}", self.psnr, self.ssim, self.sam, self.ergas)
    }

    pub fn parse_table_row(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("metrics row {s:?}: {e}")))?;
        match v[..] {
            [psnr, ssim, sam, ergas] => Ok(Self { psnr, ssim, sam, ergas }),
            _ => Err(Error::Format(format!("metrics row {s:?}: expected 4 fields"))),
        }
    }
}

/// Per-image metrics with an ordered dataset mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<(String, Metrics)>,
}

impl MetricsReport {
    pub fn mean(&self) -> Metrics {
        let n = self.rows.len().max(1) as f64;
        let mut m = Metrics { psnr: 0.0, ssim: 0.0, sam: 0.0, ergas: 0.0 };
        for (_, r) in &self.rows {
            m.psnr += r.psnr;
            m.ssim += r.ssim;
            m.sam += r.sam;
            m.ergas += r.ergas;
        }
        Metrics { psnr: m.psnr / n, ssim: m.ssim / n, sam: m.sam / n, ergas: m.ergas / n }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,psnr,ssim,sam,ergas\n");
        let line = |s: &mut String, id: &str, m: &Metrics| {
            writeln!(s, "{id},{:.6},{:.6},{:.6},{:.6}", m.psnr, m.ssim, m.sam, m.ergas).unwrap();
        };
        for (id, m) in &self.rows {
            line(&mut s, id, m);
        }
        line(&mut s, "mean", &self.mean());
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
