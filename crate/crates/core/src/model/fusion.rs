//! Fusion of the HR-MSI and LR-HSI estimates under the radiometric
//! constraint `u ⊙ ū_SR ≈ ū_SSR ⊙ û_SR`.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::sr::{prox_net, register_prox};
use crate::nn::{register_resblock, resblock, Binder, Init, ParamStore};
use crate::tensor::{Real, Tensor};

pub const HFI_BLOCKS: usize = 2;

/// Low-frequency carriers and the geometry carrier for one stage.
#[derive(Clone, Copy, Debug)]
pub struct FusionContext<'t, T: Real> {
    pub u_bar_sr: Var<'t, T>,
    pub u_bar_ssr: Var<'t, T>,
    pub u_hat_sr: Var<'t, T>,
    pub epsilon: f64,
}

impl<'t, T: Real> FusionContext<'t, T> {
    pub fn new(u_bar_sr: Var<'t, T>, u_bar_ssr: Var<'t, T>, u_hat_sr: Var<'t, T>, epsilon: f64) -> Result<Self> {
        let s = u_bar_sr.shape();
        if u_bar_ssr.shape() != s || u_hat_sr.shape() != s {
            return Err(Error::Shape(format!(
                "fusion context shapes {:?}, {:?}, {:?}",
                s,
                u_bar_ssr.shape(),
                u_hat_sr.shape()
            )));
        }
        Ok(Self { u_bar_sr, u_bar_ssr, u_hat_sr, epsilon })
    }

    /// `½‖u⊙ū_SR − ū_SSR⊙û_SR‖²`.
    pub fn energy(&self, u: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.residual(u)?.half_sq_norm())
    }

    fn residual(&self, u: Var<'t, T>) -> Result<Var<'t, T>> {
        u.mul(self.u_bar_sr)?.sub(self.u_bar_ssr.mul(self.u_hat_sr)?)
    }

    /// Closed-form minimiser `(ū_SSR⊙û_SR) ⊘ ū_SR`, with divisors clamped to magnitude ≥ ε.
    pub fn stationary_point(&self) -> Result<Tensor<T>> {
        let eps = T::lit(self.epsilon);
        let num = self.u_bar_ssr.value().zip_map(&self.u_hat_sr.value(), |a, b| a * b)?;
        num.zip_map(&self.u_bar_sr.value(), |n, d| {
            let d = if d.abs() < eps { eps.copysign(d) } else { d };
            n / d
        })
    }
}

/// `ū_SR ⊙ (u⊙ū_SR − ū_SSR⊙û_SR)`.
pub fn fusion_gradient<'t, T: Real>(u: Var<'t, T>, ctx: &FusionContext<'t, T>) -> Result<Var<'t, T>> {
    ctx.u_bar_sr.mul(ctx.residual(u)?)
}

fn register_lfe<T: Real>(store: &mut ParamStore<T>, p: &str, cin: usize, cout: usize, feat: usize, rng: &mut impl Rng) {
    store.conv(&format!("{p}.c1"), 3, cin, feat, Init::HeUniform, rng);
    store.conv(&format!("{p}.c2"), 3, feat, feat, Init::HeUniform, rng);
    store.conv(&format!("{p}.c3"), 3, feat, cout, Init::HeUniform, rng);
}

fn register_hfi<T: Real>(store: &mut ParamStore<T>, p: &str, cfg: &ModelConfig, rng: &mut impl Rng) {
    let (c, big_c, feat) = (cfg.ms_bands, cfg.hs_bands, cfg.features);
    store.conv(&format!("{p}.entry"), 3, c + 2 * big_c, feat, Init::HeUniform, rng);
    for r in 0..HFI_BLOCKS {
        register_resblock(store, &format!("{p}.rb{r}"), feat, rng);
    }
    store.conv(&format!("{p}.exit"), 3, feat, big_c, Init::HeUniform, rng);
}

pub fn register<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) {
    let (c, big_c, feat) = (cfg.ms_bands, cfg.hs_bands, cfg.features);
    register_lfe(store, "fus.init.lfe_sr", c, big_c, feat, rng);
    register_hfi(store, "fus.init.hfi", cfg, rng);
    for n in 0..cfg.stages {
        let p = format!("fus.{n}");
        store.scalar(&format!("{p}.tau"), cfg.tau_init);
        register_lfe(store, &format!("{p}.lfe_sr"), c, big_c, feat, rng);
        register_lfe(store, &format!("{p}.lfe_ssr"), big_c, big_c, feat, rng);
        register_hfi(store, &format!("{p}.hfi"), cfg, rng);
        register_prox(store, &format!("{p}.prox"), big_c + c, big_c, cfg, rng);
    }
}

/// Three 3×3 convolutions with ReLU in between.
pub fn lfe<'t, T: Real>(b: &Binder<'t, '_, T>, p: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let y = b.conv(&format!("{p}.c1"), x, 1)?.relu();
    let y = b.conv(&format!("{p}.c2"), y, 1)?.relu();
    b.conv(&format!("{p}.c3"), y, 1)
}

/// Residual blocks over `[u_SR, Bic(u_SSR), ū_SR]`, with a skip from `Bic(u_SSR)`.
pub fn hfi<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    p: &str,
    u_sr: Var<'t, T>,
    u_ssr_up: Var<'t, T>,
    u_bar_sr: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let x = Var::concat_channels(&[u_sr, u_ssr_up, u_bar_sr])?;
    let mut y = b.conv(&format!("{p}.entry"), x, 1)?;
    for r in 0..HFI_BLOCKS {
        y = resblock(b, &format!("{p}.rb{r}"), y)?;
    }
    u_ssr_up.add(b.conv(&format!("{p}.exit"), y, 1)?)
}

/// Low-pass of the HR-MSI: bicubic down by `s`, then back up.
pub fn low_pass<'t, T: Real>(u_sr: Var<'t, T>, s: usize) -> Result<Var<'t, T>> {
    let (h, w, _) = u_sr.value().hwc()?;
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("low_pass: factor {s} does not divide {h}x{w}")));
    }
    u_sr.resize_bicubic(h / s, w / s)?.resize_bicubic(h, w)
}

/// Guided proximity network: the argument concatenated with `u_SR`, skip from the argument.
pub fn prox_fus<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    x: Var<'t, T>,
    u_sr: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let input = Var::concat_channels(&[x, u_sr])?;
    prox_net(b, &format!("fus.{stage}.prox"), cfg, input, x)
}

/// Builds stage `stage`'s context with that stage's own LFE/HFI weights.
pub fn context<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    u_sr: Var<'t, T>,
    u_ssr_up: Var<'t, T>,
) -> Result<FusionContext<'t, T>> {
    let p = format!("fus.{stage}");
    let u_bar_sr = lfe(b, &format!("{p}.lfe_sr"), low_pass(u_sr, cfg.sampling_factor)?)?;
    let u_bar_ssr = lfe(b, &format!("{p}.lfe_ssr"), u_ssr_up)?;
    let u_hat_sr = hfi(b, &format!("{p}.hfi"), u_sr, u_ssr_up, u_bar_sr)?;
    FusionContext::new(u_bar_sr, u_bar_ssr, u_hat_sr, cfg.fusion_epsilon)
}

/// Runs all fusion stages on `u_SR: [H, W, c]` and `u_SSR: [h, w, C]`.
pub fn fusion_unfold<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    u_sr: Var<'t, T>,
    u_ssr: Var<'t, T>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    if cfg.stages == 0 {
        return Err(Error::Config("fusion_unfold needs at least one stage".into()));
    }
    let (h, w, _) = u_sr.value().hwc()?;
    let (lh, lw, _) = u_ssr.value().hwc()?;
    let s = cfg.sampling_factor;
    if (lh * s, lw * s) != (h, w) {
        return Err(Error::Shape(format!("fusion: {lh}x{lw}·{s} does not match {h}x{w}")));
    }
    let u_ssr_up = u_ssr.resize_bicubic(h, w)?;
    let init_bar = lfe(b, "fus.init.lfe_sr", low_pass(u_sr, s)?)?;
    let mut u = hfi(b, "fus.init.hfi", u_sr, u_ssr_up, init_bar)?;
    let mut per_stage = Vec::with_capacity(cfg.stages);
    for n in 0..cfg.stages {
        let ctx = context(b, cfg, n, u_sr, u_ssr_up)?;
        let tau = b.get(&format!("fus.{n}.tau"))?;
        let z = u.sub(fusion_gradient(u, &ctx)?.scale_by(tau)?)?;
        u = prox_fus(b, cfg, n, z, u_sr)?;
        per_stage.push(u);
    }
    Ok((u, per_stage))
}
