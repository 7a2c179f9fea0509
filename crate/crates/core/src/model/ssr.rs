//! Spectral super-resolution: `K` unfolded stages from the LR-MSI to an
//! LR-HSI estimate, with spectral operators routed per pixel cluster.

use std::rc::Rc;

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::model::config::{ClusterMode, ModelConfig};
use crate::model::kmeans;
use crate::nn::{rcab, register_rcab, Binder, Init, ParamStore};
use crate::tensor::{Real, Tensor};

pub const ASSIGN_HIDDEN: usize = 16;
pub const CENTROIDS: &str = "ssr.kmeans.centroids";

/// Per-pixel cluster routing, computed once from the LR-MSI.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMap<T> {
    pub height: usize,
    pub width: usize,
    pub clusters: usize,
    /// Raster-order cluster index of every pixel.
    pub indices: Vec<usize>,
    /// Softmax probabilities `[h, w, M]` when the assignment is learned.
    pub probabilities: Option<Tensor<T>>,
    members: Vec<Rc<Vec<usize>>>,
}

impl<T: Real> ClusterMap<T> {
    pub fn from_indices(height: usize, width: usize, clusters: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != height * width {
            return Err(Error::Shape(format!("{} indices for a {height}x{width} map", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= clusters) {
            return Err(Error::Shape(format!("cluster index {bad} out of {clusters}")));
        }
        let mut members = vec![Vec::new(); clusters];
        for (px, &k) in indices.iter().enumerate() {
            members[k].push(px);
        }
        Ok(Self {
            height,
            width,
            clusters,
            indices,
            probabilities: None,
            members: members.into_iter().map(Rc::new).collect(),
        })
    }

    /// Everything in cluster 0.
    pub fn single(height: usize, width: usize) -> Self {
        Self::from_indices(height, width, 1, vec![0; height * width]).unwrap()
    }

    /// Argmax over the last axis of `[h, w, M]` probabilities, lowest index on ties.
    pub fn from_probabilities(probs: Tensor<T>) -> Result<Self> {
        let (h, w, m) = probs.hwc()?;
        let indices = probs
            .data()
            .chunks_exact(m)
            .map(|p| p.iter().enumerate().fold((0, p[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0)
            .collect();
        let mut map = Self::from_indices(h, w, m, indices)?;
        map.probabilities = Some(probs);
        Ok(map)
    }

    /// Raster-ordered pixel indices of cluster `k`.
    pub fn members(&self, k: usize) -> &Rc<Vec<usize>> {
        &self.members[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.len()).collect()
    }
}

/// Splits `[h, w, d]` into one `[n_k, d]` list per cluster (empty clusters give `None`).
pub fn cluster_split<T: Real>(x: &Tensor<T>, map: &ClusterMap<T>) -> Result<Vec<Option<Tensor<T>>>> {
    let (h, w, d) = x.hwc()?;
    if (h, w) != (map.height, map.width) {
        return Err(Error::Shape(format!("map {}x{} vs image {h}x{w}", map.height, map.width)));
    }
    Ok(map
        .members
        .iter()
        .map(|m| {
            (!m.is_empty()).then(|| {
                let mut out = Vec::with_capacity(m.len() * d);
                for &px in m.iter() {
                    out.extend_from_slice(&x.data()[px * d..(px + 1) * d]);
                }
                Tensor::from_vec(&[m.len(), d], out).unwrap()
            })
        })
        .collect())
}

/// Inverse of [`cluster_split`].
pub fn cluster_recon<T: Real>(lists: &[Option<Tensor<T>>], map: &ClusterMap<T>) -> Result<Tensor<T>> {
    if lists.len() != map.clusters {
        return Err(Error::Shape(format!("{} lists for {} clusters", lists.len(), map.clusters)));
    }
    let d = lists
        .iter()
        .flatten()
        .map(|t| t.shape().get(1).copied().unwrap_or(0))
        .next()
        .ok_or_else(|| Error::Shape("cluster_recon: all lists empty".into()))?;
    let mut out = vec![T::zero(); map.height * map.width * d];
    for (k, (list, members)) in lists.iter().zip(&map.members).enumerate() {
        let n = list.as_ref().map_or(0, |t| t.shape()[0]);
        if n != members.len() || list.as_ref().is_some_and(|t| t.shape() != [n, d]) {
            return Err(Error::Shape(format!("cluster {k}: list of {n} rows, map has {}", members.len())));
        }
        if let Some(t) = list {
            for (r, &px) in members.iter().enumerate() {
                out[px * d..(px + 1) * d].copy_from_slice(&t.data()[r * d..(r + 1) * d]);
            }
        }
    }
    Tensor::from_vec(&[map.height, map.width, d], out)
}

pub fn register<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) {
    let (c, big_c, m, hid) = (cfg.ms_bands, cfg.hs_bands, cfg.effective_clusters(), cfg.hidden());
    match cfg.cluster_mode {
        ClusterMode::Learned => {
            store.conv("ssr.assign.c1", 3, c, ASSIGN_HIDDEN, Init::HeUniform, rng);
            store.conv("ssr.assign.c2", 3, ASSIGN_HIDDEN, m, Init::HeUniform, rng);
        }
        ClusterMode::Kmeans => store.insert(CENTROIDS, Tensor::zeros(&[m, c]), false),
        ClusterMode::None => {}
    }
    register_mlps(store, "ssr.init.up", m, c, hid, big_c, rng);
    for n in 0..cfg.stages {
        let p = format!("ssr.{n}");
        store.scalar(&format!("{p}.tau"), cfg.tau_init);
        register_mlps(store, &format!("{p}.up"), m, c, hid, big_c, rng);
        register_mlps(store, &format!("{p}.down"), m, big_c, hid, c, rng);
        store.conv(&format!("{p}.prox.entry"), 3, big_c, cfg.features, Init::HeUniform, rng);
        for r in 0..cfg.res_blocks {
            register_rcab(store, &format!("{p}.prox.rcab{r}"), cfg.features, cfg.rcab_reduction, rng);
        }
        store.conv(&format!("{p}.prox.exit"), 3, cfg.features, big_c, Init::Zero, rng);
    }
}

fn register_mlps<T: Real>(
    store: &mut ParamStore<T>,
    p: &str,
    m: usize,
    din: usize,
    hid: usize,
    dout: usize,
    rng: &mut impl Rng,
) {
    for k in 0..m {
        store.linear(&format!("{p}.m{k}.l1"), din, hid, Init::HeUniform, rng);
        store.linear(&format!("{p}.m{k}.l2"), hid, dout, Init::HeUniform, rng);
    }
}

/// Routes pixels of the LR-MSI `f: [h, w, c]` to clusters.
pub fn assign_clusters<'t, T: Real>(b: &Binder<'t, '_, T>, cfg: &ModelConfig, f: Var<'t, T>) -> Result<ClusterMap<T>> {
    let (h, w, c) = f.value().hwc()?;
    match cfg.cluster_mode {
        ClusterMode::None => Ok(ClusterMap::single(h, w)),
        ClusterMode::Learned => {
            let logits = b.conv("ssr.assign.c2", b.conv("ssr.assign.c1", f, 1)?.relu(), 1)?;
            let probs = logits.softmax(2)?;
            ClusterMap::from_probabilities((*probs.value()).clone())
        }
        ClusterMode::Kmeans => {
            let cents = b.store().get(CENTROIDS)?;
            let m = cents.shape()[0];
            let centroids: Vec<Vec<f64>> =
                cents.data().chunks_exact(c).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
            let indices = f
                .value()
                .data()
                .chunks_exact(c)
                .map(|px| kmeans::nearest(&centroids, &px.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
                .collect();
            ClusterMap::from_indices(h, w, m, indices)
        }
    }
}

/// Fits k-means centroids on a sample of LR-MSI pixels and stores them.
pub fn fit_kmeans<T: Real>(store: &mut ParamStore<T>, pixels: &[Vec<f64>], iters: usize, seed: u64) -> Result<()> {
    let m = store.get(CENTROIDS)?.shape()[0];
    let cents = kmeans::kmeans(pixels, m, iters, seed)?;
    let c = cents[0].len();
    *store.get_mut(CENTROIDS)? = Tensor::from_vec(&[m, c], cents.into_iter().flatten().map(T::lit).collect())?;
    Ok(())
}

/// Applies cluster `k`'s two-layer MLP `p.m{k}` to that cluster's pixels and reassembles.
pub fn cluster_mlp<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    p: &str,
    x: Var<'t, T>,
    map: &ClusterMap<T>,
) -> Result<Var<'t, T>> {
    let (h, w, d) = x.value().hwc()?;
    if (h, w) != (map.height, map.width) {
        return Err(Error::Shape(format!("map {}x{} vs image {h}x{w}", map.height, map.width)));
    }
    let flat = x.reshape(&[h * w, d])?;
    let mut parts = Vec::new();
    let mut idx = Vec::new();
    for k in 0..map.clusters {
        let members = map.members(k);
        if members.is_empty() {
            continue;
        }
        let rows = flat.gather_rows(members.clone())?;
        let hidden = b.linear(&format!("{p}.m{k}.l1"), rows)?.relu();
        parts.push(b.linear(&format!("{p}.m{k}.l2"), hidden)?);
        idx.push(members.clone());
    }
    let out = Var::scatter_rows(&parts, &idx, h * w)?;
    let dout = out.value().shape()[1];
    out.reshape(&[h, w, dout])
}

/// Spectral lift `[h, w, c] → [h, w, C]` with stage `stage`'s weights.
pub fn up_ssr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    stage: usize,
    x: Var<'t, T>,
    map: &ClusterMap<T>,
) -> Result<Var<'t, T>> {
    cluster_mlp(b, &format!("ssr.{stage}.up"), x, map)
}

/// Spectral projection `[h, w, C] → [h, w, c]` with stage `stage`'s weights.
pub fn down_ssr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    stage: usize,
    x: Var<'t, T>,
    map: &ClusterMap<T>,
) -> Result<Var<'t, T>> {
    cluster_mlp(b, &format!("ssr.{stage}.down"), x, map)
}

/// Channel-attention residual proximity network with a global skip.
pub fn prox_ssr<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let p = format!("ssr.{stage}.prox");
    let mut y = b.conv(&format!("{p}.entry"), x, 1)?;
    for r in 0..cfg.res_blocks {
        y = rcab(b, &format!("{p}.rcab{r}"), y)?;
    }
    x.add(b.conv(&format!("{p}.exit"), y, 1)?)
}

/// Runs all spectral stages on `f` with a fixed cluster map.
pub fn ssr_unfold<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    cfg: &ModelConfig,
    f: Var<'t, T>,
    map: &ClusterMap<T>,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    if cfg.stages == 0 {
        return Err(Error::Config("ssr_unfold needs at least one stage".into()));
    }
    let mut u = cluster_mlp(b, "ssr.init.up", f, map)?;
    let mut per_stage = Vec::with_capacity(cfg.stages);
    for n in 0..cfg.stages {
        let tau = b.get(&format!("ssr.{n}.tau"))?;
        let residual = down_ssr(b, n, u, map)?.sub(f)?;
        let step = up_ssr(b, n, residual, map)?.scale_by(tau)?;
        u = prox_ssr(b, cfg, n, u.sub(step)?)?;
        per_stage.push(u);
    }
    Ok((u, per_stage))
}
