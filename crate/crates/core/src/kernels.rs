//! Raw numeric kernels on `[H, W, C]` buffers. No graph bookkeeping here.

use crate::tensor::{gemm, Real};

/// Geometry of a 2-D convolution over an `[H, W, C]` image with a square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, cin: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self { h, w, cin, k, stride, pad, ho, wo })
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// Unfolds every receptive field into one row of a `[ho*wo, k*k*cin]` matrix,
/// ordered `(ky, kx, ci)` to match a `[k, k, cin, cout]` kernel.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    let mut col = vec![T::zero(); g.ho * g.wo * plen];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut col[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds the rows back onto an `[h, w, cin]` image.
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, out: &mut [T]) {
    let plen = g.patch_len();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &col[(oy * g.wo + ox) * plen..][..plen];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for c in 0..g.cin {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
}

/// Forward convolution: `x` is `[h, w, cin]`, `kernel` is `[k, k, cin, cout]`.
pub fn conv2d_forward<T: Real>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeom, cout: usize) -> Vec<T> {
    let col = im2col(x, g);
    let rows = g.ho * g.wo;
    let mut out = vec![T::zero(); rows * cout];
    gemm(false, false, rows, g.patch_len(), cout, &col, kernel, &mut out, false);
    if let Some(b) = bias {
        add_row_bias(&mut out, b);
    }
    out
}

/// Transposed convolution: the exact adjoint of [`conv2d_forward`] with the same kernel.
/// `y` is `[ho, wo, cout]`, the result is `[h, w, cin]`.
pub fn conv2d_adjoint<T: Real>(y: &[T], kernel: &[T], g: &ConvGeom, cout: usize) -> Vec<T> {
    let rows = g.ho * g.wo;
    let mut col = vec![T::zero(); rows * g.patch_len()];
    gemm(false, true, rows, cout, g.patch_len(), y, kernel, &mut col, false);
    let mut out = vec![T::zero(); g.h * g.w * g.cin];
    col2im(&col, g, &mut out);
    out
}

pub fn add_row_bias<T: Real>(rows: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in rows.chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn sum_rows<T: Real>(rows: &[T], n: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); n];
    for row in rows.chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Row-major `[out_len, in_len]` interpolation matrix along one axis.
///
/// Uses half-pixel centre alignment and clamps taps at the borders.
pub fn bicubic_matrix<T: Real>(in_len: usize, out_len: usize) -> Vec<T> {
    let mut m = vec![0.0f64; out_len * in_len];
    let ratio = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = (o as f64 + 0.5) * ratio - 0.5;
        let base = src.floor();
        let frac = src - base;
        for tap in -1i64..=2 {
            let wgt = cubic_weight(frac - tap as f64);
            let idx = (base as i64 + tap).clamp(0, in_len as i64 - 1) as usize;
            m[o * in_len + idx] += wgt;
        }
    }
    m.into_iter().map(T::lit).collect()
}

/// Separable resize of an `[h, w, c]` image with per-axis matrices `my: [ho, h]`, `mx: [wo, w]`.
#[allow(clippy::too_many_arguments)]
pub fn separable_apply<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    my: &[T],
    ho: usize,
    mx: &[T],
    wo: usize,
) -> Vec<T> {
    let mut tmp = vec![T::zero(); ho * w * c];
    gemm(false, false, ho, h, w * c, my, x, &mut tmp, false);
    let mut out = vec![T::zero(); ho * wo * c];
    for oy in 0..ho {
        gemm(
            false,
            false,
            wo,
            w,
            c,
            mx,
            &tmp[oy * w * c..(oy + 1) * w * c],
            &mut out[oy * wo * c..(oy + 1) * wo * c],
            false,
        );
    }
    out
}

/// Adjoint of [`separable_apply`].
#[allow(clippy::too_many_arguments)]
pub fn separable_adjoint<T: Real>(
    g: &[T],
    h: usize,
    w: usize,
    c: usize,
    my: &[T],
    ho: usize,
    mx: &[T],
    wo: usize,
) -> Vec<T> {
    let mut tmp = vec![T::zero(); ho * w * c];
    for oy in 0..ho {
        gemm(
            true,
            false,
            w,
            wo,
            c,
            mx,
            &g[oy * wo * c..(oy + 1) * wo * c],
            &mut tmp[oy * w * c..(oy + 1) * w * c],
            false,
        );
    }
    let mut out = vec![T::zero(); h * w * c];
    gemm(true, false, h, ho, w * c, my, &tmp, &mut out, false);
    out
}

/// Circular shift of an `[h, w, c]` image: `out[(y+dy) mod h, (x+dx) mod w] = x[y, x]`.
pub fn roll<T: Real>(x: &[T], h: usize, w: usize, c: usize, dy: isize, dx: isize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    for y in 0..h {
        let ty = (y + sy) % h;
        for xx in 0..w {
            let tx = (xx + sx) % w;
            out[(ty * w + tx) * c..][..c].copy_from_slice(&x[(y * w + xx) * c..][..c]);
        }
    }
    out
}
