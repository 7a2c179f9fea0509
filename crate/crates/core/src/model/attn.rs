//! Nonlocal post-processor: windowed multi-head attention restricted to the
//! top-k most similar pixels, applied once plainly and once on a
//! half-window-shifted image, inside a residual branch.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::model::config::{AttnConfig, ModelConfig};
use crate::nn::{Binder, Init, ParamStore};
use crate::tensor::{Real, Tensor};

/// The `P×P` neighbourhood of every pixel stacked on the channel axis
/// (offsets in raster order, channels innermost), zeros outside the image.
pub fn patch_image<T: Real>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    if patch.is_multiple_of(2) {
        return Err(Error::Shape(format!("patch size {patch} must be odd")));
    }
    let (h, w, c) = x.hwc()?;
    let r = (patch / 2) as isize;
    let d = c * patch * patch;
    let mut out = vec![T::zero(); h * w * d];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * d;
            let mut o = 0;
            for di in -r..=r {
                for dj in -r..=r {
                    let (y, xx) = (i as isize + di, j as isize + dj);
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        let src = (y as usize * w + xx as usize) * c;
                        out[base + o..base + o + c].copy_from_slice(&x.data()[src..src + c]);
                    }
                    o += c;
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, d], out)
}

/// Kept neighbours of one pixel: raster indices and softmax weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    pub indices: Vec<usize>,
    pub weights: Vec<T>,
}

/// Top-k softmax attention weights of every pixel of `q`/`k` (both `[H, W, e]`)
/// over its in-image `window×window` neighbourhood. Ties keep the lower raster index.
pub fn attention_weights<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    window: usize,
    topk: usize,
) -> Result<Vec<Selection<T>>> {
    q.check_same_shape(k)?;
    let (h, w, e) = q.hwc()?;
    let r = (window / 2) as isize;
    let scale = T::lit(1.0 / (e as f64).sqrt());
    let mut out = Vec::with_capacity(h * w);
    let mut cands: Vec<(T, usize)> = Vec::with_capacity(window * window);
    for i in 0..h {
        for j in 0..w {
            let qj = &q.data()[(i * w + j) * e..(i * w + j + 1) * e];
            cands.clear();
            for y in (i as isize - r).max(0)..=(i as isize + r).min(h as isize - 1) {
                for x in (j as isize - r).max(0)..=(j as isize + r).min(w as isize - 1) {
                    let l = y as usize * w + x as usize;
                    let kl = &k.data()[l * e..(l + 1) * e];
                    let s = qj.iter().zip(kl).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale;
                    cands.push((s, l));
                }
            }
            cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            cands.truncate(topk);
            let m = cands[0].0;
            let exps: Vec<T> = cands.iter().map(|&(s, _)| (s - m).exp()).collect();
            let z = exps.iter().fold(T::zero(), |a, &b| a + b);
            out.push(Selection {
                indices: cands.iter().map(|&(_, l)| l).collect(),
                weights: exps.into_iter().map(|v| v / z).collect(),
            });
        }
    }
    Ok(out)
}

/// `out_j = Σ_l a_jl · v_l` with `a` from [`attention_weights`]; differentiable in `q`, `k` and `v`.
pub fn topk_attention<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    window: usize,
    topk: usize,
) -> Result<Var<'t, T>> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let (h, w, e) = qv.hwc()?;
    let (vh, vw, dv) = vv.hwc()?;
    if (vh, vw) != (h, w) {
        return Err(Error::Shape(format!("topk_attention: values {vh}x{vw} vs queries {h}x{w}")));
    }
    let sel = attention_weights(&qv, &kv, window, topk)?;
    let mut out = vec![T::zero(); h * w * dv];
    for (j, s) in sel.iter().enumerate() {
        let o = &mut out[j * dv..(j + 1) * dv];
        for (&l, &a) in s.indices.iter().zip(&s.weights) {
            for (oc, &vc) in o.iter_mut().zip(&vv.data()[l * dv..(l + 1) * dv]) {
                *oc += a * vc;
            }
        }
    }
    let value = Tensor::from_vec(&[h, w, dv], out)?;
    let scale = T::lit(1.0 / (e as f64).sqrt());
    Ok(q.tape.push(
        value,
        &[q, k, v],
        Box::new(move |g, needs| {
            let g = g.data();
            let mut dq = vec![T::zero(); h * w * e];
            let mut dk = vec![T::zero(); h * w * e];
            let mut dvv = vec![T::zero(); h * w * dv];
            let mut da = Vec::new();
            for (j, s) in sel.iter().enumerate() {
                let gj = &g[j * dv..(j + 1) * dv];
                da.clear();
                for (&l, &a) in s.indices.iter().zip(&s.weights) {
                    let vl = &vv.data()[l * dv..(l + 1) * dv];
                    da.push(gj.iter().zip(vl).fold(T::zero(), |acc, (&x, &y)| acc + x * y));
                    for (d, &gc) in dvv[l * dv..(l + 1) * dv].iter_mut().zip(gj) {
                        *d += a * gc;
                    }
                }
                let mean = s.weights.iter().zip(&da).fold(T::zero(), |acc, (&a, &d)| acc + a * d);
                let qj: Vec<T> = qv.data()[j * e..(j + 1) * e].to_vec();
                for ((&l, &a), &d) in s.indices.iter().zip(&s.weights).zip(&da) {
                    let ds = a * (d - mean) * scale;
                    for c in 0..e {
                        dq[j * e + c] += ds * kv.data()[l * e + c];
                        dk[l * e + c] += ds * qj[c];
                    }
                }
            }
            vec![
                needs[0].then(|| Tensor::from_vec(&[h, w, e], dq).unwrap()),
                needs[1].then(|| Tensor::from_vec(&[h, w, e], dk).unwrap()),
                needs[2].then(|| Tensor::from_vec(&[h, w, dv], dvv).unwrap()),
            ]
        }),
    ))
}

fn register_mha<T: Real>(store: &mut ParamStore<T>, p: &str, c: usize, cfg: &AttnConfig, rng: &mut impl Rng) {
    let e = cfg.embed_dim;
    for j in 0..cfg.heads {
        let hp = format!("{p}.h{j}");
        store.conv(&format!("{hp}.embed"), cfg.patch, c, e, Init::HeUniform, rng);
        store.conv(&format!("{hp}.q"), 1, e, e, Init::HeUniform, rng);
        store.conv(&format!("{hp}.k"), 1, e, e, Init::HeUniform, rng);
        store.conv(&format!("{hp}.v"), 1, c, c, Init::HeUniform, rng);
        store.conv(&format!("{hp}.o"), 1, c, c, Init::HeUniform, rng);
    }
    store.conv(&format!("{p}.proj"), 1, cfg.heads * c, c, Init::HeUniform, rng);
}

pub fn register<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) {
    let c = cfg.hs_bands;
    register_mha(store, "pp.mha0", c, &cfg.attn, rng);
    register_mha(store, "pp.mha1", c, &cfg.attn, rng);
    store.conv("pp.head", 3, c, c, Init::Zero, rng);
}

/// Patch embedding `[H, W, C] → [H, W, e]` used for similarity only.
pub fn embed<'t, T: Real>(b: &Binder<'t, '_, T>, p: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    b.conv(&format!("{p}.embed"), x, 1)
}

/// One attention head with its own embedding, projections and output map.
pub fn head_attention<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    p: &str,
    x: Var<'t, T>,
    cfg: &AttnConfig,
) -> Result<Var<'t, T>> {
    let e = embed(b, p, x)?;
    let q = b.conv(&format!("{p}.q"), e, 1)?;
    let k = b.conv(&format!("{p}.k"), e, 1)?;
    let v = b.conv(&format!("{p}.v"), x, 1)?;
    let y = topk_attention(q, k, v, cfg.window, cfg.topk())?;
    b.conv(&format!("{p}.o"), y, 1)
}

/// `heads` independent heads, concatenated and projected back to `C` channels.
pub fn mha<'t, T: Real>(b: &Binder<'t, '_, T>, p: &str, x: Var<'t, T>, cfg: &AttnConfig) -> Result<Var<'t, T>> {
    let heads = (0..cfg.heads).map(|j| head_attention(b, &format!("{p}.h{j}"), x, cfg)).collect::<Result<Vec<_>>>()?;
    let cat = if heads.len() == 1 { heads[0] } else { Var::concat_channels(&heads)? };
    b.conv(&format!("{p}.proj"), cat, 1)
}

/// `u + head(unroll(mha(roll(mha(u)))))`, rolled circularly by half a window on both axes.
pub fn postprocess<'t, T: Real>(b: &Binder<'t, '_, T>, cfg: &AttnConfig, u: Var<'t, T>) -> Result<Var<'t, T>> {
    let shift = (cfg.window / 2) as isize;
    let y1 = mha(b, "pp.mha0", u, cfg)?;
    let y2 = mha(b, "pp.mha1", y1.roll(shift, shift)?, cfg)?.roll(-shift, -shift)?;
    u.add(b.conv("pp.head", y2, 1)?)
}
