//! End-to-end commands over a run directory: simulate, train, evaluate, infer.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::synth::MANIFEST_FILE;
use crate::data::{load_hsc, save_hsc, synth_dataset, DatasetManifest, ImageCube, Split};
use crate::error::{Error, Result};
use crate::metrics::{Metrics, MetricsReport};
use crate::model::signature;
use crate::tensor::Tensor;
use crate::train::{backbone_digest, predict, train_phase1, train_phase2, Checkpoint, History, Sample, Trainer};

pub const PHASE1_CHECKPOINT: &str = "phase1.ckpt";
pub const PHASE2_CHECKPOINT: &str = "phase2.ckpt";

#[derive(Clone, Debug)]
pub struct RunDirs {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl RunDirs {
    pub fn new(cfg: &RunConfig, base: &Path) -> Self {
        Self {
            dataset: RunConfig::resolve(base, &cfg.paths.dataset),
            checkpoints: RunConfig::resolve(base, &cfg.paths.checkpoints),
            reports: RunConfig::resolve(base, &cfg.paths.reports),
        }
    }

    pub fn checkpoint(&self, phase: u8) -> PathBuf {
        self.checkpoints.join(if phase == 1 { PHASE1_CHECKPOINT } else { PHASE2_CHECKPOINT })
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// `phase`-and-schedule tag that goes into the logged parameter signature.
pub fn schedule_tag(cfg: &RunConfig) -> String {
    let s = &cfg.training.schedule;
    format!("sr{:?}/ssr{:?}/fus{:?}@{:?}", s.alpha_sr, s.alpha_ssr, s.alpha_fus, s.milestones)
}

pub fn simulate(cfg: &RunConfig, base: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let dirs = RunDirs::new(cfg, base);
    mkdir(&dirs.dataset)?;
    synth_dataset(cfg.seed, cfg.data.samples, &cfg.synth_dims(), &cfg.degradation()?, &dirs.dataset)
}

pub fn load_manifest(cfg: &RunConfig, base: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(&RunDirs::new(cfg, base).dataset.join(MANIFEST_FILE))
}

pub fn load_samples(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    Ok(manifest.load_split(split)?.iter().map(|(id, q)| Sample::new(id.clone(), q)).collect())
}

fn check_sample_dims(cfg: &RunConfig, samples: &[Sample]) -> Result<()> {
    let d = &cfg.dims;
    let want = [d.height / d.sampling_factor, d.width / d.sampling_factor, d.ms_bands];
    for s in samples {
        if s.lr_msi.shape() != want || s.hr_hsi.shape() != [d.height, d.width, d.hs_bands] {
            return Err(Error::Ingest(format!(
                "sample {} has LR-MSI {:?} / HR-HSI {:?}, config expects {:?} / {:?}",
                s.id,
                s.lr_msi.shape(),
                s.hr_hsi.shape(),
                want,
                [d.height, d.width, d.hs_bands]
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub phase: u8,
    pub history: History,
    pub checkpoint: PathBuf,
    pub signature: String,
    pub backbone_digest: String,
}

/// Phase 1 from fresh parameters. Writes the best-validation checkpoint and the loss CSV.
pub fn train_first(cfg: &RunConfig, base: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let dirs = RunDirs::new(cfg, base);
    let manifest = load_manifest(cfg, base)?;
    let (train, val) = (load_samples(&manifest, Split::Train)?, load_samples(&manifest, Split::Val)?);
    check_sample_dims(cfg, &train)?;
    check_sample_dims(cfg, &val)?;
    let mut trainer = Trainer::new(cfg.clone(), &train)?;
    let sig = signature(&trainer.params, &trainer.model, &schedule_tag(cfg));
    log::info!("parameter signature: {sig}");
    let outcome = train_phase1(&mut trainer, &train, &val, cfg.training.phase1_epochs)?;
    finish(1, &dirs, outcome, sig)
}

/// Phase 2 on top of the stored phase-1 checkpoint.
pub fn train_second(cfg: &RunConfig, base: &Path) -> Result<TrainReport> {
    let dirs = RunDirs::new(cfg, base);
    let phase1 = Checkpoint::load(&dirs.checkpoint(1))?;
    let manifest = load_manifest(cfg, base)?;
    let (train, val) = (load_samples(&manifest, Split::Train)?, load_samples(&manifest, Split::Val)?);
    check_sample_dims(&phase1.config, &train)?;
    let sig = signature(&phase1.params, &phase1.config.model_config(), &schedule_tag(&phase1.config));
    log::info!("parameter signature: {sig}");
    let epochs = cfg.training.phase2_epochs;
    let outcome = train_phase2(phase1, &train, &val, epochs)?;
    finish(2, &dirs, outcome, sig)
}

fn finish(phase: u8, dirs: &RunDirs, outcome: crate::train::Outcome, signature: String) -> Result<TrainReport> {
    mkdir(&dirs.checkpoints)?;
    mkdir(&dirs.reports)?;
    let path = dirs.checkpoint(phase);
    outcome.best.save(&path)?;
    write(&dirs.reports.join(format!("phase{phase}_loss.csv")), &outcome.history.to_csv())?;
    if let Some(msg) = &outcome.history.aborted {
        return Err(Error::Numerical(format!("{msg}; best checkpoint kept at {}", path.display())));
    }
    Ok(TrainReport {
        phase,
        backbone_digest: backbone_digest(&outcome.best.params),
        history: outcome.history,
        checkpoint: path,
        signature,
    })
}

/// Metrics of a checkpoint on one split. Post-processing is applied for phase-2 checkpoints.
pub fn evaluate(ck: &Checkpoint, samples: &[Sample]) -> Result<MetricsReport> {
    check_sample_dims(&ck.config, samples)?;
    let model = ck.config.model_config();
    let mut report = MetricsReport::default();
    for s in samples {
        let out = predict(&ck.params, &model, &s.lr_msi, ck.phase == 2)?.output;
        report.rows.push((s.id.clone(), Metrics::compute(&out, &s.hr_hsi, model.sampling_factor)?));
    }
    Ok(report)
}

pub fn evaluate_split(
    cfg: &RunConfig,
    base: &Path,
    checkpoint: &Path,
    split: Split,
) -> Result<(MetricsReport, PathBuf)> {
    let ck = Checkpoint::load(checkpoint)?;
    let manifest = load_manifest(cfg, base)?;
    let report = evaluate(&ck, &load_samples(&manifest, split)?)?;
    let dirs = RunDirs::new(cfg, base);
    mkdir(&dirs.reports)?;
    let path = dirs.reports.join(format!("metrics_{}.csv", split.name()));
    report.write_csv(&path)?;
    Ok((report, path))
}

#[derive(Clone, Debug, Default)]
pub struct PreviewOptions {
    /// Bands mapped to R, G, B; `(C−1, C/2, 0)` when absent.
    pub bands: Option<[usize; 3]>,
    /// `(row, column)` of the spectrum probe; the centre when absent.
    pub probe: Option<(usize, usize)>,
}

/// Runs the network on an LR-MSI file and writes the HR-HSI estimate.
/// With `preview`, also writes `<out>.png` and `<out>.spectrum.csv`.
pub fn infer(ck: &Checkpoint, input: &Path, output: &Path, preview: Option<&PreviewOptions>) -> Result<ImageCube> {
    let cube = load_hsc(input)?;
    let model = ck.config.model_config();
    if cube.channels() != model.ms_bands {
        return Err(Error::Ingest(format!("input has {} bands, model expects {}", cube.channels(), model.ms_bands)));
    }
    let out = predict(&ck.params, &model, cube.tensor(), ck.phase == 2)?.output;
    let result = ImageCube::from_tensor(out)?;
    save_hsc(&result, output)?;
    if let Some(opts) = preview {
        write_preview(&result, &ck.config, opts, output)?;
    }
    Ok(result)
}

fn write_preview(cube: &ImageCube, cfg: &RunConfig, opts: &PreviewOptions, output: &Path) -> Result<()> {
    let (h, w, c) = cube.dims();
    let rgb: Tensor<f32> = match (&cfg.data.response, opts.bands) {
        (Some(r), None) if r.len() == 3 => crate::data::spectral_degrade(cube, r)?.into_tensor(),
        _ => {
            let bands = opts.bands.unwrap_or([c - 1, c / 2, 0]);
            if let Some(&b) = bands.iter().find(|&&b| b >= c) {
                return Err(Error::Config(format!("preview band {b} out of {c}")));
            }
            Tensor::from_fn(&[h, w, 3], |i| cube.tensor().data()[(i / 3) * c + bands[i % 3]])
        }
    };
    let bytes: Vec<u8> = rgb.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized for image");
    let png = output.with_extension("png");
    img.save(&png)?;
    let (py, px) = opts.probe.unwrap_or((h / 2, w / 2));
    if py >= h || px >= w {
        return Err(Error::Config(format!("probe ({py}, {px}) outside {h}x{w}")));
    }
    let mut csv = String::from("band,wavelength,value\n");
    for (b, v) in cube.pixel(py, px).iter().enumerate() {
        let wl = cube.wavelengths().map(|wl| format!("{}", wl[b])).unwrap_or_default();
        csv.push_str(&format!("{b},{wl},{v:.6}\n"));
    }
    write(&output.with_extension("spectrum.csv"), &csv)
}
