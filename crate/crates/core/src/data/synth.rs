//! Desk-scale synthetic hyperspectral scenes and the dataset manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::degrade::{make_quadruple, DegradationSpec, Quadruple};
use crate::data::hsc::{load_hsc, save_hsc};
use crate::data::ImageCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDims {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Number of latent endmember spectra shared by the whole dataset.
    pub endmembers: usize,
}

impl Default for SynthDims {
    fn default() -> Self {
        Self { height: 32, width: 32, bands: 8, endmembers: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// LR-MSI.
    pub f: PathBuf,
    /// HR-MSI.
    #[serde(rename = "F")]
    pub hr_msi: PathBuf,
    /// LR-HSI.
    pub g: PathBuf,
    /// HR-HSI.
    #[serde(rename = "G")]
    pub hr_hsi: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Sample list plus split assignment. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
    pub split: SplitLists,
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.split.train,
            Split::Val => &self.split.val,
            Split::Test => &self.split.test,
        }
    }

    pub fn record(&self, id: &str) -> Result<&SampleRecord> {
        self.samples.iter().find(|r| r.id == id).ok_or_else(|| Error::Config(format!("sample {id} not in manifest")))
    }

    pub fn load_sample(&self, id: &str) -> Result<Quadruple> {
        let r = self.record(id)?;
        Ok(Quadruple {
            lr_msi: load_hsc(self.root.join(&r.f))?,
            hr_msi: load_hsc(self.root.join(&r.hr_msi))?,
            lr_hsi: load_hsc(self.root.join(&r.g))?,
            hr_hsi: load_hsc(self.root.join(&r.hr_hsi))?,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<(String, Quadruple)>> {
        self.ids(split).iter().map(|id| Ok((id.clone(), self.load_sample(id)?))).collect()
    }

    /// Checks split disjointness, id coverage and file existence.
    pub fn validate(&self) -> Result<()> {
        let known: BTreeSet<&str> = self.samples.iter().map(|r| r.id.as_str()).collect();
        if known.len() != self.samples.len() {
            return Err(Error::Config("duplicate sample ids in manifest".into()));
        }
        let mut seen = BTreeSet::new();
        for id in self.split.train.iter().chain(&self.split.val).chain(&self.split.test) {
            if !known.contains(id.as_str()) {
                return Err(Error::Config(format!("split references unknown sample {id}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("sample {id} appears in more than one split")));
            }
        }
        for r in &self.samples {
            for p in [&r.f, &r.hr_msi, &r.g, &r.hr_hsi] {
                if !self.root.join(p).is_file() {
                    return Err(Error::Config(format!("missing file {}", self.root.join(p).display())));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads `manifest.json` from a dataset directory (or the file itself) and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }
}

/// Random generator for sample `index` of a dataset seeded by `seed`.
/// Stream 0 is reserved for dataset-wide state (the endmembers).
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

/// Smooth endmember spectra in `[0.05, 0.95]`.
pub fn endmembers(seed: u64, count: usize, bands: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    (0..count)
        .map(|_| {
            let base = rng.random_range(0.05..0.3);
            let bumps: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.random_range(0.0..bands as f64),
                        rng.random_range(0.1..0.35) * bands as f64,
                        rng.random_range(-0.2..0.6),
                    )
                })
                .collect();
            (0..bands)
                .map(|b| {
                    let v = base
                        + bumps.iter().map(|&(c, w, a)| a * (-0.5 * ((b as f64 - c) / w).powi(2)).exp()).sum::<f64>();
                    v.clamp(0.05, 0.95)
                })
                .collect()
        })
        .collect()
}

/// Composites Gaussian blobs and soft-edged rectangles, each carrying one
/// endmember spectrum, over a dim mixed background.
pub fn synth_cube(dims: &SynthDims, spectra: &[Vec<f64>], rng: &mut impl Rng) -> Result<ImageCube> {
    let (h, w, c) = (dims.height, dims.width, dims.bands);
    let scale = h.min(w) as f64 / 32.0;
    let mix: Vec<f64> = {
        let a = rng.random_range(0..spectra.len());
        let b = rng.random_range(0..spectra.len());
        (0..c).map(|k| 0.5 * (spectra[a][k] + spectra[b][k]) * 0.4).collect()
    };
    let mut img: Vec<f64> = (0..h * w).flat_map(|_| mix.iter().copied()).collect();
    let paint = |img: &mut Vec<f64>, alpha: &dyn Fn(f64, f64) -> f64, spec: &[f64], gain: f64| {
        for y in 0..h {
            for x in 0..w {
                let a = alpha(y as f64, x as f64);
                if a <= 1e-6 {
                    continue;
                }
                let px = &mut img[(y * w + x) * c..][..c];
                for (v, &s) in px.iter_mut().zip(spec) {
                    *v = (1.0 - a) * *v + a * (gain * s).min(1.0);
                }
            }
        }
    };
    let rects = rng.random_range(2..=4);
    for _ in 0..rects {
        let (y0, x0) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let (rh, rw) = (rng.random_range(3.0..12.0) * scale, rng.random_range(3.0..12.0) * scale);
        let spec = &spectra[rng.random_range(0..spectra.len())];
        let gain = rng.random_range(0.7..1.3);
        let a = rng.random_range(0.6..1.0);
        let edge = |d: f64| 1.0 / (1.0 + (-4.0 * d).exp());
        paint(
            &mut img,
            &move |y, x| a * edge(y - y0) * edge(y0 + rh - y) * edge(x - x0) * edge(x0 + rw - x),
            spec,
            gain,
        );
    }
    let blobs = rng.random_range(6..=10);
    for _ in 0..blobs {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let sigma = rng.random_range(1.5..5.0) * scale;
        let spec = &spectra[rng.random_range(0..spectra.len())];
        let gain = rng.random_range(0.7..1.3);
        let a = rng.random_range(0.5..1.0);
        paint(
            &mut img,
            &move |y, x| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp(),
            spec,
            gain,
        );
    }
    let data = img.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    ImageCube::new(Tensor::from_vec(&[h, w, c], data)?, None)
}

/// Split sizes for `count` samples: 10 % validation, 10 % test (at least one
/// each when there are three or more samples), the rest training.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    if count < 3 {
        return (count, 0, 0);
    }
    let held = ((count as f64 * 0.1).round() as usize).max(1);
    (count - 2 * held, held, held)
}

/// Generates, degrades and writes `count` samples under `dir`; returns the saved manifest.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    dims: &SynthDims,
    spec: &DegradationSpec,
    dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if dims.bands != spec.hs_bands() {
        return Err(Error::Config(format!("{} bands vs response with {} columns", dims.bands, spec.hs_bands())));
    }
    let s = spec.sampling_factor;
    if !dims.height.is_multiple_of(s) || !dims.width.is_multiple_of(s) {
        return Err(Error::Config(format!("sampling factor {s} does not divide {}x{}", dims.height, dims.width)));
    }
    if dims.endmembers == 0 || count == 0 {
        return Err(Error::Config("need at least one endmember and one sample".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spectra = endmembers(seed, dims.endmembers, dims.bands);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = sample_rng(seed, i as u64);
        let cube = synth_cube(dims, &spectra, &mut rng)?;
        let q = make_quadruple(&cube, spec, &mut rng)?;
        let id = format!("sample_{i:03}");
        let sub = PathBuf::from(&id);
        fs::create_dir_all(dir.join(&sub)).map_err(|e| Error::io(dir.join(&sub), e))?;
        let rec = SampleRecord {
            id: id.clone(),
            f: sub.join("f_lrmsi.hsc"),
            hr_msi: sub.join("F_hrmsi.hsc"),
            g: sub.join("g_lrhsi.hsc"),
            hr_hsi: sub.join("G_hrhsi.hsc"),
        };
        save_hsc(&q.lr_msi, dir.join(&rec.f))?;
        save_hsc(&q.hr_msi, dir.join(&rec.hr_msi))?;
        save_hsc(&q.lr_hsi, dir.join(&rec.g))?;
        save_hsc(&q.hr_hsi, dir.join(&rec.hr_hsi))?;
        samples.push(rec);
    }
    let (n_train, n_val, _) = split_sizes(count);
    let ids: Vec<String> = samples.iter().map(|r| r.id.clone()).collect();
    let split = SplitLists {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    let manifest = DatasetManifest { seed, samples, split, root: dir.to_path_buf() };
    manifest.save(dir)?;
    Ok(manifest)
}
