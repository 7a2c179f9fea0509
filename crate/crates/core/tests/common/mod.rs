#![allow(dead_code)]

use jssu::model::{init_params, AttnConfig, ModelConfig};
use jssu::nn::ParamStore;
use jssu::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn unit_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

/// A model small enough for finite differences.
pub fn small_cfg() -> ModelConfig {
    ModelConfig {
        ms_bands: 3,
        hs_bands: 5,
        sampling_factor: 2,
        stages: 1,
        features: 4,
        res_blocks: 1,
        clusters: 3,
        rcab_reduction: 2,
        attn: AttnConfig { window: 5, patch: 3, embed_dim: 4, heads: 2, topk_ratio: 0.3 },
        ..ModelConfig::default()
    }
}

pub fn store(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    init_params(cfg, seed).expect("valid config")
}

pub fn set(store: &mut ParamStore<f64>, path: &str, value: Tensor<f64>) {
    let slot = store.get_mut(path).expect("registered parameter");
    assert_eq!(slot.shape(), value.shape(), "{path}");
    *slot = value;
}

/// Overwrites every parameter under `prefix` with uniform noise of the given scale.
pub fn randomize(store: &mut ParamStore<f64>, prefix: &str, scale: f64, rng: &mut ChaCha8Rng) {
    for (path, p) in store.iter_mut() {
        if path.starts_with(prefix) {
            p.value = Tensor::from_fn(p.value.shape(), |_| scale * rng.random_range(-1.0..1.0));
        }
    }
}

/// Copies the stage-0 parameters matching `suffix` (e.g. ".down.") into every other stage.
pub fn share_stage_params(store: &mut ParamStore<f64>, module: &str, suffix: &str, stages: usize) {
    let first = format!("{module}.0{suffix}");
    let copies: Vec<(String, Tensor<f64>)> =
        store.iter().filter(|(k, _)| k.starts_with(&first)).map(|(k, p)| (k.clone(), p.value.clone())).collect();
    for n in 1..stages {
        for (k, v) in &copies {
            let target = k.replacen(&format!("{module}.0."), &format!("{module}.{n}."), 1);
            set(store, &target, v.clone());
        }
    }
}

pub fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pins a closure to the scalar-function signature the gradient checker expects.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t jssu::Tape<f64>, jssu::Var<'t, f64>) -> jssu::Result<jssu::Var<'t, f64>>,
{
    f
}
