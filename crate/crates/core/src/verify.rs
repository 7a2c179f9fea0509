//! Named finite-difference checks over the primitives and the three fidelity
//! gradients, each on a freshly drawn random instance.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{check_against, gradient_check, GradReport};
use crate::model::attn::topk_attention;
use crate::model::fusion::{fusion_gradient, hfi, FusionContext};
use crate::model::sr::{down_sr, prox_sr, up_sr};
use crate::model::ssr::{down_ssr, ClusterMap};
use crate::model::{init_params, AttnConfig, ModelConfig, Upsampler};
use crate::nn::{Binder, ParamStore, Trainable};
use crate::tensor::Tensor;
use crate::train::{loss_phase1, Alphas};

#[derive(Clone, Copy, Debug)]
pub struct Check {
    pub name: &'static str,
    /// The part of the system a failure points at.
    pub component: &'static str,
    run: fn(&mut ChaCha8Rng, f64) -> Result<GradReport>,
}

impl Check {
    /// Runs on an instance drawn from `seed`; `tol` bounds the relative error.
    pub fn run(&self, seed: u64, tol: f64) -> Result<GradReport> {
        (self.run)(&mut ChaCha8Rng::seed_from_u64(seed), tol)
    }
}

const STEP: f64 = 1e-6;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn noise(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn readout<'t>(t: &'t Tape<f64>, y: Var<'t, f64>, w: &Tensor<f64>) -> Result<Var<'t, f64>> {
    Ok(y.mul(t.constant(w.clone()))?.sum())
}

/// Gradient check of `x ↦ ⟨op(x), w⟩` for a random readout `w` of the output shape.
fn primitive<F>(rng: &mut ChaCha8Rng, input: Tensor<f64>, tol: f64, op: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let shape = {
        let tape = Tape::new();
        op(&tape, tape.constant(input.clone()))?.shape()
    };
    let w = noise(&shape, rng);
    gradient_check(|t, x| readout(t, op(t, x)?, &w), &input, STEP, tol)
}

/// A model small enough for finite differences, with every weight randomized.
fn tiny_model(rng: &mut ChaCha8Rng, upsampler: Upsampler) -> Result<(ModelConfig, ParamStore<f64>)> {
    let cfg = ModelConfig {
        ms_bands: 3,
        hs_bands: 4,
        sampling_factor: 2,
        stages: 1,
        features: 4,
        res_blocks: 1,
        clusters: 3,
        rcab_reduction: 2,
        sr_upsampler: upsampler,
        attn: AttnConfig { window: 3, patch: 3, embed_dim: 4, heads: 1, topk_ratio: 0.5 },
        ..ModelConfig::default()
    };
    let mut params = init_params::<f64>(&cfg, rng.random())?;
    for (_, p) in params.iter_mut() {
        p.value = Tensor::from_fn(p.value.shape(), |_| 0.3 * rng.random_range(-1.0..1.0));
    }
    Ok((cfg, params))
}

fn conv_input(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (k, b) = (noise(&[3, 3, 3, 2], rng), noise(&[2], rng));
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| x.conv2d(t.constant(k.clone()), Some(t.constant(b.clone())), 2, 1))
}

fn conv_kernel(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let img = noise(&[6, 6, 3], rng);
    let k = noise(&[3, 3, 3, 2], rng);
    primitive(rng, k, tol, |t, k| t.constant(img.clone()).conv2d(k, None, 1, 1))
}

fn conv_transpose(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let k = noise(&[5, 5, 2, 3], rng);
    let x = noise(&[3, 3, 3], rng);
    primitive(rng, x, tol, |t, x| x.conv_transpose2d(t.constant(k.clone()), None, 2))
}

fn bicubic(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let x = noise(&[6, 6, 2], rng);
    primitive(rng, x, tol, |_, x| x.resize_bicubic(9, 13))
}

fn softmax(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |_, x| x.softmax(2))
}

fn product(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let o = noise(&[6, 6, 3], rng);
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| x.mul(t.constant(o.clone()))?.mul(x)?.sigmoid().add(x))
}

fn matmul(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (w, b) = (noise(&[3, 4], rng), noise(&[4], rng));
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| x.reshape(&[36, 3])?.matmul(t.constant(w.clone()))?.add_bias(t.constant(b.clone())))
}

fn routing(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let mut rows: Vec<usize> = (0..36).collect();
    let cut = rng.random_range(1..35);
    for i in (1..36).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }
    let (a, b) = (Rc::new(rows[..cut].to_vec()), Rc::new(rows[cut..].to_vec()));
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |_, x| {
        let flat = x.reshape(&[36, 3])?;
        let parts = [flat.gather_rows(a.clone())?.scale(2.0), flat.gather_rows(b.clone())?.relu()];
        Var::scatter_rows(&parts, &[a.clone(), b.clone()], 36)
    })
}

fn channel_gate(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let g = noise(&[3], rng);
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| x.mul_channels(x.mean_pool()?.mul(t.constant(g.clone()))?.sigmoid()))
}

fn shift(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let o = noise(&[6, 6, 2], rng);
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| Var::concat_channels(&[x.roll(2, -3)?, t.constant(o.clone()), x]))
}

fn l1(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (f, g, big_g) = (noise(&[6, 6, 3], rng), noise(&[3, 3, 4], rng), noise(&[6, 6, 4], rng));
    let (u_sr, u_ssr) = (noise(&[6, 6, 3], rng), noise(&[3, 3, 4], rng));
    let x = noise(&[6, 6, 4], rng);
    let alphas = Alphas { sr: 2.0, ssr: 1.0, fus: 0.5 };
    gradient_check(
        |t, x| {
            let c = |v: &Tensor<f64>| t.constant(v.clone());
            loss_phase1(&[c(&u_sr)], &[c(&u_ssr)], &[x], c(&f), c(&g), c(&big_g), alphas)
        },
        &x,
        STEP,
        tol,
    )
}

fn sr(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (cfg, params) = tiny_model(rng, Upsampler::Adjoint)?;
    let u = noise(&[6, 6, 3], rng);
    let f = noise(&[3, 3, 3], rng);
    let analytic = {
        let tape = Tape::new();
        let b = Binder::new(&tape, &params, Trainable::None);
        (*up_sr(&b, &cfg, 0, tape.constant(u.clone()), tape.constant(f.clone()))?.value()).clone()
    };
    check_against(
        |t, x| {
            let b = Binder::new(t, &params, Trainable::None);
            Ok(down_sr(&b, &cfg, 0, x)?.sub(t.constant(f.clone()))?.half_sq_norm())
        },
        &u,
        analytic,
        STEP,
        tol,
    )
}

fn ssr(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (cfg, params) = tiny_model(rng, Upsampler::Bp)?;
    let map =
        ClusterMap::from_indices(6, 6, cfg.clusters, (0..36).map(|_| rng.random_range(0..cfg.clusters)).collect())?;
    let u = noise(&[6, 6, cfg.hs_bands], rng);
    let f = noise(&[6, 6, cfg.ms_bands], rng);
    gradient_check(
        |t, x| {
            let b = Binder::new(t, &params, Trainable::None);
            Ok(down_ssr(&b, 0, x, &map)?.sub(t.constant(f.clone()))?.half_sq_norm())
        },
        &u,
        STEP,
        tol,
    )
}

fn fixed_context<'t>(t: &'t Tape<f64>, parts: &[Tensor<f64>; 3]) -> Result<FusionContext<'t, f64>> {
    let [a, b, h] = parts.clone().map(|v| t.constant(v));
    FusionContext::new(a, b, h, 1e-6)
}

fn fusion(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let shape = [6, 6, 4];
    let bar_sr = Tensor::from_fn(&shape, |_| {
        let v = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let (bar_ssr, hat_sr, u) = (noise(&shape, rng), noise(&shape, rng), noise(&shape, rng));
    let parts = [bar_sr, bar_ssr, hat_sr];
    let analytic = {
        let tape = Tape::new();
        let g = fusion_gradient(tape.constant(u.clone()), &fixed_context(&tape, &parts)?)?;
        (*g.value()).clone()
    };
    check_against(|t, x| fixed_context(t, &parts)?.energy(x), &u, analytic, STEP, tol)
}

fn prox(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (cfg, params) = tiny_model(rng, Upsampler::Bp)?;
    let x = noise(&[6, 6, 3], rng);
    primitive(rng, x, tol, |t, x| prox_sr(&Binder::new(t, &params, Trainable::None), &cfg, 0, x))
}

fn geometry(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (_, params) = tiny_model(rng, Upsampler::Bp)?;
    let u_sr = uniform(&[6, 6, 3], 0.0, 1.0, rng);
    let bar = uniform(&[6, 6, 4], 0.0, 1.0, rng);
    let x = uniform(&[6, 6, 4], 0.0, 1.0, rng);
    primitive(rng, x, tol, |t, x| {
        let b = Binder::new(t, &params, Trainable::None);
        hfi(&b, "fus.0.hfi", t.constant(u_sr.clone()), x, t.constant(bar.clone()))
    })
}

fn attention(rng: &mut ChaCha8Rng, tol: f64) -> Result<GradReport> {
    let (k, v) = (noise(&[6, 6, 4], rng), noise(&[6, 6, 3], rng));
    let q = noise(&[6, 6, 4], rng);
    primitive(rng, q, tol, |t, q| topk_attention(q, t.constant(k.clone()), t.constant(v.clone()), 5, 8))
}

pub const CHECKS: &[Check] = &[
    Check { name: "conv2d", component: "tensor-core", run: conv_input },
    Check { name: "conv2d_kernel", component: "tensor-core", run: conv_kernel },
    Check { name: "conv_transpose2d", component: "tensor-core", run: conv_transpose },
    Check { name: "bicubic", component: "tensor-core", run: bicubic },
    Check { name: "softmax", component: "tensor-core", run: softmax },
    Check { name: "elementwise", component: "tensor-core", run: product },
    Check { name: "matmul", component: "tensor-core", run: matmul },
    Check { name: "routing", component: "tensor-core", run: routing },
    Check { name: "channel_gate", component: "tensor-core", run: channel_gate },
    Check { name: "roll_concat", component: "tensor-core", run: shift },
    Check { name: "loss", component: "train-eval", run: l1 },
    Check { name: "sr", component: "unfold-sr", run: sr },
    Check { name: "prox", component: "unfold-sr", run: prox },
    Check { name: "ssr", component: "unfold-ssr", run: ssr },
    Check { name: "fusion", component: "unfold-fusion", run: fusion },
    Check { name: "hfi", component: "unfold-fusion", run: geometry },
    Check { name: "attention", component: "postproc-attn", run: attention },
];

pub fn find(name: &str) -> Result<&'static Check> {
    CHECKS.iter().find(|c| c.name == name).ok_or_else(|| {
        let names: Vec<&str> = CHECKS.iter().map(|c| c.name).collect();
        Error::Config(format!("unknown check {name:?}; known: {}", names.join(", ")))
    })
}
