//! The full LR-MSI → HR-HSI network: spatial and spectral solvers, fusion,
//! and the optional attention post-processor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autograd::Var;
use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::ssr::ClusterMap;
use crate::model::{attn, fusion, sr, ssr};
use crate::nn::{Binder, ParamStore};
use crate::tensor::Real;

/// Parameter prefixes of the post-processor; everything else is the backbone.
pub const POSTPROC_PREFIX: &str = "pp.";

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    sr::register(&mut store, cfg, &mut rng);
    ssr::register(&mut store, cfg, &mut rng);
    fusion::register(&mut store, cfg, &mut rng);
    attn::register(&mut store, cfg, &mut rng);
    Ok(store)
}

pub struct Outputs<'t, T: Real> {
    pub u_sr: Var<'t, T>,
    pub u_ssr: Var<'t, T>,
    /// Fused estimate before post-processing.
    pub u_fus: Var<'t, T>,
    /// Post-processed estimate (equals `u_fus` when post-processing is off).
    pub output: Var<'t, T>,
    pub sr_stages: Vec<Var<'t, T>>,
    pub ssr_stages: Vec<Var<'t, T>>,
    pub fus_stages: Vec<Var<'t, T>>,
    pub clusters: ClusterMap<T>,
}

/// Runs the backbone on `f: [h, w, c]`, then post-processing if asked.
pub fn forward<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    f: Var<'t, T>,
    postprocess: bool,
) -> Result<Outputs<'t, T>> {
    let (h, w, _) = f.value().hwc()?;
    cfg.check_dims(h * cfg.sampling_factor, w * cfg.sampling_factor)?;
    let (u_sr, sr_stages) = sr::sr_unfold(b, cfg, f)?;
    let clusters = ssr::assign_clusters(b, cfg, f)?;
    let (u_ssr, ssr_stages) = ssr::ssr_unfold(b, cfg, f, &clusters)?;
    let (u_fus, fus_stages) = fusion::fusion_unfold(b, cfg, u_sr, u_ssr)?;
    let output = if postprocess { attn::postprocess(b, &cfg.attn, u_fus)? } else { u_fus };
    Ok(Outputs { u_sr, u_ssr, u_fus, output, sr_stages, ssr_stages, fus_stages, clusters })
}

/// Parameter-count signature: total scalars, per-module counts, and a hash of
/// the parameter layout plus `tag` (anything else that changes behaviour,
/// such as the loss schedule).
pub fn signature<T: Real>(store: &ParamStore<T>, cfg: &ModelConfig, tag: &str) -> String {
    let count = |prefix: &str| -> usize {
        store.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.value.len()).sum()
    };
    let mut hasher = Sha256::new();
    for (k, p) in store.iter() {
        hasher.update(k.as_bytes());
        hasher.update(format!("{:?};", p.value.shape()).as_bytes());
    }
    hasher.update(format!("{:?}/{:?}/{:?}|{tag}", cfg.sr_upsampler, cfg.sr_steps, cfg.cluster_mode).as_bytes());
    let digest = hasher.finalize();
    format!(
        "params={} sr={} ssr={} fus={} pp={} layout={:016x}",
        count(""),
        count("sr."),
        count("ssr."),
        count("fus."),
        count(POSTPROC_PREFIX),
        u64::from_be_bytes(digest[..8].try_into().expect("sha-256 is 32 bytes"))
    )
}
