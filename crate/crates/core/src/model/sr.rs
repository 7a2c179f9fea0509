//! Spatial super-resolution: `K` unfolded proximal-gradient stages from the
//! LR-MSI to an HR-MSI estimate.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, ResidualSign, UpSteps, Upsampler};
use crate::nn::{register_resblock, resblock, Binder, Init, ParamStore};
use crate::tensor::{Real, Tensor};

/// Ascending prime factors of `s`; empty for `s = 1`.
pub fn prime_factors(mut s: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while s > 1 {
        while s.is_multiple_of(p) {
            out.push(p);
            s /= p;
        }
        p += 1;
        if p * p > s && s > 1 {
            out.push(s);
            break;
        }
    }
    out
}

/// Strides of the upsampling steps, applied in order.
pub fn up_steps(cfg: &ModelConfig) -> Vec<usize> {
    let s = cfg.sampling_factor;
    match cfg.sr_steps {
        UpSteps::Progressive => prime_factors(s).into_iter().rev().collect(),
        UpSteps::Single if s > 1 => vec![s],
        UpSteps::Single => Vec::new(),
    }
}

fn prefix(stage: usize) -> String {
    format!("sr.{stage}")
}

pub fn register<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) {
    let c = cfg.ms_bands;
    for n in 0..cfg.stages {
        let p = prefix(n);
        store.scalar(&format!("{p}.tau"), cfg.tau_init);
        for (i, f) in prime_factors(cfg.sampling_factor).into_iter().enumerate() {
            store.conv(&format!("{p}.down.{i}"), 2 * f + 1, c, c, Init::HeUniform, rng);
        }
        if cfg.sr_upsampler != Upsampler::Adjoint {
            for (j, st) in up_steps(cfg).into_iter().enumerate() {
                store.conv(&format!("{p}.up.t{j}"), 2 * st + 1, c, c, Init::HeUniform, rng);
            }
            store.conv(&format!("{p}.up.refine"), 3, c, c, Init::HeUniform, rng);
        }
        if cfg.sr_upsampler == Upsampler::Bp {
            store.conv(&format!("{p}.up.kappa"), 3, c, c, Init::HeUniform, rng);
        }
        register_prox(store, &format!("{p}.prox"), c, c, cfg, rng);
    }
}

/// Entry conv, residual blocks, zero-initialised exit conv.
pub(crate) fn register_prox<T: Real>(
    store: &mut ParamStore<T>,
    p: &str,
    cin: usize,
    cout: usize,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) {
    store.conv(&format!("{p}.entry"), 3, cin, cfg.features, Init::HeUniform, rng);
    for r in 0..cfg.res_blocks {
        register_resblock(store, &format!("{p}.rb{r}"), cfg.features, rng);
    }
    store.conv(&format!("{p}.exit"), 3, cfg.features, cout, Init::Zero, rng);
}

/// Learned downsampling: one stride-`p`, `(2p+1)²` convolution per prime factor.
pub fn down_sr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    u: Var<'t, T>,
) -> Result<Var<'t, T>> {
    down_chain(b, cfg, stage, u, true)
}

fn down_chain<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    u: Var<'t, T>,
    with_bias: bool,
) -> Result<Var<'t, T>> {
    let (h, w, _) = u.value().hwc()?;
    let s = cfg.sampling_factor;
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("down_sr: sampling factor {s} does not divide {h}x{w}")));
    }
    let p = prefix(stage);
    let mut x = u;
    for (i, f) in prime_factors(s).into_iter().enumerate() {
        let wv = b.get(&format!("{p}.down.{i}.w"))?;
        let bias = if with_bias { Some(b.get(&format!("{p}.down.{i}.b"))?) } else { None };
        x = x.conv2d(wv, bias, f, f)?;
    }
    Ok(x)
}

/// The bias-free part of [`down_sr`]; the linear operator whose adjoint
/// gives the exact fidelity gradient.
pub fn down_sr_linear<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    u: Var<'t, T>,
) -> Result<Var<'t, T>> {
    down_chain(b, cfg, stage, u, false)
}

/// Exact adjoint of [`down_sr_linear`]: transposed convolutions with the same kernels in reverse order.
pub fn down_sr_adjoint<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    r: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let p = prefix(stage);
    let mut x = r;
    for (i, f) in prime_factors(cfg.sampling_factor).into_iter().enumerate().rev() {
        let wv = b.get(&format!("{p}.down.{i}.w"))?;
        x = x.conv_transpose2d(wv, None, f)?;
    }
    Ok(x)
}

/// Maps a low-resolution residual `[h, w, c]` to `[h·s, w·s, c]`.
pub fn up_operator<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    r: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let p = prefix(stage);
    if cfg.sr_upsampler == Upsampler::Adjoint {
        return down_sr_adjoint(b, cfg, stage, r);
    }
    let mut x = r;
    for (j, st) in up_steps(cfg).into_iter().enumerate() {
        let wv = b.get(&format!("{p}.up.t{j}.w"))?;
        let bias = b.get(&format!("{p}.up.t{j}.b"))?;
        x = x.conv_transpose2d(wv, Some(bias), st)?;
    }
    let mut out = b.conv(&format!("{p}.up.refine"), x, 1)?;
    if cfg.sr_upsampler == Upsampler::Bp {
        let bic = r.resize_scale(cfg.sampling_factor as f64)?;
        out = out.add(b.conv(&format!("{p}.up.kappa"), bic, 1)?)?;
    }
    Ok(out)
}

/// `Up(D(u) − f)`: the learned back-projection of the low-resolution residual.
pub fn up_sr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    u: Var<'t, T>,
    f: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let residual = down_sr(b, cfg, stage, u)?.sub(f)?;
    up_operator(b, cfg, stage, residual)
}

/// Residual proximity network with a global skip from the input.
pub fn prox_sr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    prox_net(b, &format!("{}.prox", prefix(stage)), cfg, x, x)
}

/// `skip + exit(resblocks(entry(input)))`.
pub(crate) fn prox_net<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    p: &str,
    cfg: &ModelConfig,
    input: Var<'t, T>,
    skip: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let mut y = b.conv(&format!("{p}.entry"), input, 1)?;
    for r in 0..cfg.res_blocks {
        y = resblock(b, &format!("{p}.rb{r}"), y)?;
    }
    skip.add(b.conv(&format!("{p}.exit"), y, 1)?)
}

/// Runs all spatial stages. Returns the final HR-MSI estimate and every stage output.
pub fn sr_unfold<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    f: Var<'t, T>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    if cfg.stages == 0 {
        return Err(Error::Config("sr_unfold needs at least one stage".into()));
    }
    let (h, w, _) = f.value().hwc()?;
    let s = cfg.sampling_factor;
    let mut u = f.resize_bicubic(h * s, w * s)?;
    let mut per_stage = Vec::with_capacity(cfg.stages);
    for n in 0..cfg.stages {
        let tau = b.get(&format!("{}.tau", prefix(n)))?;
        let step = up_sr(b, cfg, n, u, f)?.scale_by(tau)?;
        let z = match cfg.sr_residual_sign {
            ResidualSign::Descent => u.sub(step)?,
            ResidualSign::Additive => u.add(step)?,
        };
        u = prox_sr(b, cfg, n, z)?;
        per_stage.push(u);
    }
    Ok((u, per_stage))
}

/// Largest eigenvalue of `DᵀD` for the bias-free downsampling of `stage`,
/// by power iteration on an `[h, w, c]` grid.
pub fn lipschitz_estimate<T: Real>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    stage: usize,
    dims: (usize, usize),
    iters: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let shape = [dims.0, dims.1, cfg.ms_bands];
    let mut v: Tensor<T> = Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-1.0..1.0)));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let norm = v.dot(&v).sqrt();
        v = v.map(|x| x / norm);
        let tape = Tape::new();
        let bnd = Binder::new(&tape, store, crate::nn::Trainable::None);
        let x = tape.constant(v.clone());
        let dtd = down_sr_adjoint(&bnd, cfg, stage, down_sr_linear(&bnd, cfg, stage, x)?)?;
        let next = (*dtd.value()).clone();
        lambda = next.dot(&v).as_f64();
        v = next;
    }
    Ok(lambda)
}
