//! Two-phase training: the backbone against the scheduled multi-stage loss,
//! then the post-processor alone against the plain l1 loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::config::RunConfig;
use crate::data::Quadruple;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::pipeline::POSTPROC_PREFIX;
use crate::model::{attn, forward, init_params, ssr, ClusterMode, ModelConfig};
use crate::nn::{Binder, ParamStore, Trainable};
use crate::tensor::Tensor;
use crate::train::{loss_phase1, Adam, Checkpoint};

/// One training/evaluation example as plain tensors.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub lr_msi: Tensor<f32>,
    pub hr_msi: Tensor<f32>,
    pub lr_hsi: Tensor<f32>,
    pub hr_hsi: Tensor<f32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, q: &Quadruple) -> Self {
        Self {
            id: id.into(),
            lr_msi: q.lr_msi.tensor().clone(),
            hr_msi: q.hr_msi.tensor().clone(),
            lr_hsi: q.lr_hsi.tensor().clone(),
            hr_hsi: q.hr_hsi.tensor().clone(),
        }
    }
}

/// Inference results as plain tensors.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub u_sr: Tensor<f32>,
    pub u_ssr: Tensor<f32>,
    pub u_fus: Tensor<f32>,
    pub output: Tensor<f32>,
}

pub fn predict(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    lr_msi: &Tensor<f32>,
    postprocess: bool,
) -> Result<Prediction> {
    let tape = Tape::new();
    let b = Binder::new(&tape, params, Trainable::None);
    let out = forward(&b, cfg, tape.constant(lr_msi.clone()), postprocess)?;
    let take = |v: crate::autograd::Var<'_, f32>| (*v.value()).clone();
    Ok(Prediction { u_sr: take(out.u_sr), u_ssr: take(out.u_ssr), u_fus: take(out.u_fus), output: take(out.output) })
}

/// Mean PSNR of `outputs` against the samples' HR-HSI.
pub fn mean_psnr(outputs: &[Tensor<f32>], samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for (o, s) in outputs.iter().zip(samples) {
        total += psnr(o, &s.hr_hsi)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index within the phase.
    pub epoch: usize,
    pub loss: f64,
    pub val_psnr: f64,
}

#[derive(Clone, Debug)]
pub struct History {
    /// Validation PSNR before any update.
    pub initial_val_psnr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the kept checkpoint; 0 means the initial state.
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    /// Set when a non-finite loss or gradient stopped training early.
    pub aborted: Option<String>,
}

impl History {
    fn new(initial_val_psnr: f64) -> Self {
        Self { initial_val_psnr, epochs: Vec::new(), best_epoch: 0, best_val_psnr: initial_val_psnr, aborted: None }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_psnr\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:.8},{:.6}\n", r.epoch, r.loss, r.val_psnr));
        }
        s
    }
}

pub struct Outcome {
    pub history: History,
    /// Best-validation state.
    pub best: Checkpoint,
    /// State after the last completed epoch.
    pub last: Checkpoint,
}

/// Mutable training state.
pub struct Trainer {
    pub config: RunConfig,
    pub model: ModelConfig,
    pub phase: u8,
    pub epoch: u64,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh parameters from the run seed; k-means centroids are fitted here when used.
    pub fn new(config: RunConfig, train: &[Sample]) -> Result<Self> {
        config.validate()?;
        let model = config.model_config();
        let mut params = init_params(&model, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        if model.cluster_mode == ClusterMode::Kmeans {
            fit_centroids(&mut params, &config, train, &mut rng)?;
        }
        let adam = Adam::new(config.training.learning_rate);
        Ok(Self { config, model, phase: 1, epoch: 0, params, adam, rng })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        let model = ck.config.model_config();
        Self {
            config: ck.config,
            model,
            phase: ck.phase,
            epoch: ck.epoch,
            params: ck.params,
            adam: ck.adam,
            rng: ck.rng,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            phase: self.phase,
            epoch: self.epoch,
            params: self.params.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
        }
    }

    /// One Adam step on one sample of the phase-1 loss; returns the loss.
    pub fn step_phase1(&mut self, s: &Sample) -> Result<f64> {
        let alphas = self.config.training.schedule.alphas(self.epoch as usize);
        let grads = {
            let tape = Tape::new();
            let b = Binder::new(&tape, &self.params, Trainable::Prefixes(backbone_prefixes()));
            let out = forward(&b, &self.model, tape.constant(s.lr_msi.clone()), false)?;
            let loss = loss_phase1(
                &out.sr_stages,
                &out.ssr_stages,
                &out.fus_stages,
                tape.constant(s.hr_msi.clone()),
                tape.constant(s.lr_hsi.clone()),
                tape.constant(s.hr_hsi.clone()),
                alphas,
            )?;
            let value = loss.value().data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss on sample {}", s.id)));
            }
            let g = tape.backward(loss)?;
            (value, b.collect(&g))
        };
        self.adam.step(&mut self.params, &grads.1)?;
        Ok(grads.0)
    }

    /// One Adam step of the post-processor on a cached fused estimate.
    pub fn step_phase2(&mut self, u_fus: &Tensor<f32>, hr_hsi: &Tensor<f32>) -> Result<f64> {
        let tape = Tape::new();
        let b = Binder::new(&tape, &self.params, Trainable::Prefixes(vec![POSTPROC_PREFIX.into()]));
        let out = attn::postprocess(&b, &self.model.attn, tape.constant(u_fus.clone()))?;
        let loss = out.l1(tape.constant(hr_hsi.clone()))?;
        let value = loss.value().data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite post-processing loss".into()));
        }
        let grads = b.collect(&tape.backward(loss)?);
        drop(b);
        self.adam.step(&mut self.params, &grads)?;
        Ok(value)
    }

    fn shuffled(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }

    /// One shuffled pass over `train`; returns the mean loss.
    pub fn epoch_phase1(&mut self, train: &[Sample]) -> Result<f64> {
        let order = self.shuffled(train.len());
        let mut total = 0.0;
        for i in order {
            total += self.step_phase1(&train[i])?;
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }

    pub fn epoch_phase2(&mut self, cached: &[Tensor<f32>], train: &[Sample]) -> Result<f64> {
        let order = self.shuffled(train.len());
        let mut total = 0.0;
        for i in order {
            total += self.step_phase2(&cached[i], &train[i].hr_hsi)?;
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }

    pub fn validation_psnr(&self, val: &[Sample], postprocess: bool) -> Result<f64> {
        let outs = val
            .iter()
            .map(|s| predict(&self.params, &self.model, &s.lr_msi, postprocess).map(|p| p.output))
            .collect::<Result<Vec<_>>>()?;
        mean_psnr(&outs, val)
    }
}

fn backbone_prefixes() -> Vec<String> {
    ["sr.", "ssr.", "fus."].iter().map(|s| s.to_string()).collect()
}

fn fit_centroids(
    params: &mut ParamStore<f32>,
    config: &RunConfig,
    train: &[Sample],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let c = config.dims.ms_bands;
    let pixels: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|s| s.lr_msi.data().chunks_exact(c).map(|p| p.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect();
    let k = ((pixels.len() as f64 * config.training.kmeans_fraction).ceil() as usize).clamp(1, pixels.len().max(1));
    let picked: Vec<Vec<f64>> =
        rand::seq::index::sample(rng, pixels.len(), k).into_iter().map(|i| pixels[i].clone()).collect();
    ssr::fit_kmeans(params, &picked, config.training.kmeans_iters, rng.random())
}

/// Runs phase 1 for the configured number of epochs, tracking the best
/// validation PSNR (the initial state counts as epoch 0).
pub fn train_phase1(trainer: &mut Trainer, train: &[Sample], val: &[Sample], epochs: usize) -> Result<Outcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    trainer.phase = 1;
    let mut history = History::new(trainer.validation_psnr(val, false)?);
    let mut best = trainer.checkpoint();
    for e in 1..=epochs {
        let snapshot = trainer.checkpoint();
        let result = trainer.epoch_phase1(train).and_then(|loss| Ok((loss, trainer.validation_psnr(val, false)?)));
        match result {
            Ok((loss, val_psnr)) => {
                log::info!("phase 1 epoch {e}: loss {loss:.6} val psnr {val_psnr:.3}");
                history.epochs.push(EpochRecord { epoch: e, loss, val_psnr });
                if val_psnr > history.best_val_psnr {
                    history.best_val_psnr = val_psnr;
                    history.best_epoch = e;
                    best = trainer.checkpoint();
                }
            }
            Err(Error::Numerical(msg)) => {
                *trainer = Trainer::from_checkpoint(snapshot);
                history.aborted = Some(format!("phase 1 epoch {e}: {msg}"));
                break;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(Outcome { history, best, last: trainer.checkpoint() })
}

/// Trains only the post-processor on top of a frozen phase-1 backbone.
pub fn train_phase2(phase1: Checkpoint, train: &[Sample], val: &[Sample], epochs: usize) -> Result<Outcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    let mut trainer = Trainer::from_checkpoint(phase1);
    trainer.phase = 2;
    trainer.epoch = 0;
    trainer.adam = Adam::new(trainer.config.training.learning_rate);
    let cache = |set: &[Sample]| -> Result<Vec<Tensor<f32>>> {
        set.iter().map(|s| predict(&trainer.params, &trainer.model, &s.lr_msi, false).map(|p| p.u_fus)).collect()
    };
    let (train_cache, val_cache) = (cache(train)?, cache(val)?);
    let val_psnr = |t: &Trainer| -> Result<f64> {
        let outs = val_cache
            .iter()
            .map(|u| {
                let tape = Tape::new();
                let b = Binder::new(&tape, &t.params, Trainable::None);
                Ok((*attn::postprocess(&b, &t.model.attn, tape.constant(u.clone()))?.value()).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        mean_psnr(&outs, val)
    };
    let mut history = History::new(val_psnr(&trainer)?);
    let mut best = trainer.checkpoint();
    for e in 1..=epochs {
        let snapshot = trainer.checkpoint();
        match trainer.epoch_phase2(&train_cache, train).and_then(|loss| Ok((loss, val_psnr(&trainer)?))) {
            Ok((loss, v)) => {
                log::info!("phase 2 epoch {e}: loss {loss:.6} val psnr {v:.3}");
                history.epochs.push(EpochRecord { epoch: e, loss, val_psnr: v });
                if v > history.best_val_psnr {
                    history.best_val_psnr = v;
                    history.best_epoch = e;
                    best = trainer.checkpoint();
                }
            }
            Err(Error::Numerical(msg)) => {
                trainer = Trainer::from_checkpoint(snapshot);
                history.aborted = Some(format!("phase 2 epoch {e}: {msg}"));
                break;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(Outcome { history, best, last: trainer.checkpoint() })
}
