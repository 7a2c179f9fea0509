//! Differentiable primitives recorded on a [`Tape`](crate::autograd::Tape).

// `add`/`sub`/`mul` are fallible (shape-checked), so they are not operator impls.
#![allow(clippy::should_implement_trait)]

use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{gemm, Real, Tensor};

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'t, T: Real> Var<'t, T> {
    fn unary(self, value: Tensor<T>, backward: impl Fn(&Tensor<T>) -> Tensor<T> + 'static) -> Var<'t, T> {
        self.tape.push(value, &[self], Box::new(move |g, _| vec![Some(backward(g))]))
    }

    fn same_shape(&self, other: &Var<'t, T>, op: &str) -> Result<()> {
        if self.value().shape() != other.value().shape() {
            return shape_err(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value().shape(),
                other.value().shape()
            ));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.tape.push(v, &[self, other], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape.push(v, &[self, other], Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|x| -x))])))
    }

    /// Element-wise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let v = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape.push(
            v,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip_map(&b, |gv, y| gv * y).unwrap()),
                    needs[1].then(|| g.zip_map(&a, |gv, x| gv * x).unwrap()),
                ]
            }),
        ))
    }

    /// Multiplication by a constant.
    pub fn scale(self, factor: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * factor);
        self.unary(v, move |g| g.map(|x| x * factor))
    }

    /// Multiplication by a one-element variable (a learnable step size, say).
    pub fn scale_by(self, factor: Var<'t, T>) -> Result<Var<'t, T>> {
        if factor.value().len() != 1 {
            return shape_err(format!("scale_by expects a scalar, got {:?}", factor.value().shape()));
        }
        let (x, s) = (self.value(), factor.value());
        let sv = s.data()[0];
        let v = x.map(|a| a * sv);
        Ok(self.tape.push(
            v,
            &[self, factor],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| g.map(|a| a * sv)), needs[1].then(|| Tensor::scalar(g.dot(&x)))]
            }),
        ))
    }

    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let v = x.map(|a| a.max(T::zero()));
        self.unary(v, move |g| g.zip_map(&x, |gv, a| if a > T::zero() { gv } else { T::zero() }).unwrap())
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let v = self.value().map(|a| T::one() / (T::one() + (-a).exp()));
        let out = Rc::new(v.clone());
        self.unary(v, move |g| g.zip_map(&out, |gv, s| gv * s * (T::one() - s)).unwrap())
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let v = Tensor::scalar(x.sum());
        self.unary(v, move |g| Tensor::full(&shape, g.data()[0]))
    }

    /// `½‖x‖²`.
    pub fn half_sq_norm(self) -> Var<'t, T> {
        let x = self.value();
        let v = Tensor::scalar(x.dot(&x) * T::lit(0.5));
        self.unary(v, move |g| x.map(|a| a * g.data()[0]))
    }

    /// Mean absolute deviation from `target`. The sub-gradient at zero is zero.
    pub fn l1(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&target, "l1")?;
        let diff = self.value().zip_map(&target.value(), |a, b| a - b)?;
        let n = T::from_usize(diff.len()).unwrap();
        let v = Tensor::scalar(diff.data().iter().map(|d| d.abs()).sum::<T>() / n);
        let sign = diff.map(|d| {
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        Ok(self.tape.push(
            v,
            &[self, target],
            Box::new(move |g, needs| {
                let k = g.data()[0] / n;
                vec![needs[0].then(|| sign.map(|s| s * k)), needs[1].then(|| sign.map(|s| -s * k))]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let v = (*x).clone().reshape(shape)?;
        Ok(self.unary(v, move |g| g.clone().reshape(&old).unwrap()))
    }

    /// 2-D convolution with zero padding. `self` is `[H, W, Cin]`, `kernel` is `[k, k, Cin, Cout]`.
    pub fn conv2d(self, kernel: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let kv = kernel.value();
        let (h, w, cin) = x.hwc()?;
        let (k, cout) = check_kernel(&kv, cin, "conv2d")?;
        let g = ConvGeom::new(h, w, cin, k, stride, pad).ok_or_else(|| {
            Error::Shape(format!("conv2d: {h}x{w} input too small for k={k}, pad={pad}, stride={stride}"))
        })?;
        if let Some(b) = &bias {
            if b.value().shape() != [cout] {
                return shape_err(format!("conv2d: bias shape {:?}, expected [{cout}]", b.value().shape()));
            }
        }
        let col = Rc::new(kernels::im2col(x.data(), &g));
        let rows = g.ho * g.wo;
        let mut out = vec![T::zero(); rows * cout];
        gemm(false, false, rows, g.patch_len(), cout, &col, kv.data(), &mut out, false);
        if let Some(b) = &bias {
            kernels::add_row_bias(&mut out, b.value().data());
        }
        let value = Tensor::from_vec(&[g.ho, g.wo, cout], out)?;
        let mut parents = vec![self, kernel];
        if let Some(b) = bias {
            parents.push(b);
        }
        let kshape = kv.shape().to_vec();
        Ok(self.tape.push(
            value,
            &parents,
            Box::new(move |gy, needs| {
                let gy = gy.data();
                let dx = needs[0].then(|| {
                    let mut dcol = vec![T::zero(); rows * g.patch_len()];
                    gemm(false, true, rows, cout, g.patch_len(), gy, kv.data(), &mut dcol, false);
                    let mut dx = vec![T::zero(); g.h * g.w * g.cin];
                    kernels::col2im(&dcol, &g, &mut dx);
                    Tensor::from_vec(&[g.h, g.w, g.cin], dx).unwrap()
                });
                let dk = needs[1].then(|| {
                    let mut dk = vec![T::zero(); g.patch_len() * cout];
                    gemm(true, false, g.patch_len(), rows, cout, &col, gy, &mut dk, false);
                    Tensor::from_vec(&kshape, dk).unwrap()
                });
                let mut grads = vec![dx, dk];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| Tensor::from_vec(&[cout], kernels::sum_rows(gy, cout)).unwrap()));
                }
                grads
            }),
        ))
    }

    /// Transposed convolution, the adjoint of [`Var::conv2d`] with the same kernel.
    ///
    /// The kernel is laid out like the forward convolution it transposes,
    /// `[k, k, Cout, Cin]`, where `Cin` is the channel count of `self` and
    /// `Cout` the channel count of the result. The output is
    /// `[h·stride, w·stride, Cout]` with padding `k/2`.
    pub fn conv_transpose2d(self, kernel: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize) -> Result<Var<'t, T>> {
        let (h, w, _) = self.value().hwc()?;
        let k = kernel.value().shape().first().copied().unwrap_or(0);
        self.conv_transpose2d_to(kernel, bias, stride, k / 2, h * stride, w * stride)
    }

    /// Transposed convolution with explicit padding and output size.
    pub fn conv_transpose2d_to(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let kv = kernel.value();
        let (h, w, cin) = x.hwc()?;
        let ks = kv.shape();
        if ks.len() != 4 || ks[0] != ks[1] || ks[0].is_multiple_of(2) {
            return shape_err(format!("conv_transpose2d: kernel must be [k,k,Cout,Cin] with odd k, got {ks:?}"));
        }
        if ks[3] != cin {
            return shape_err(format!("conv_transpose2d: input has {cin} channels, kernel expects {}", ks[3]));
        }
        let (k, cout) = (ks[0], ks[2]);
        let g =
            ConvGeom::new(out_h, out_w, cout, k, stride, pad).filter(|g| g.ho == h && g.wo == w).ok_or_else(|| {
                Error::Shape(format!("conv_transpose2d: {out_h}x{out_w} output does not reduce to {h}x{w}"))
            })?;
        if let Some(b) = &bias {
            if b.value().shape() != [cout] {
                return shape_err(format!("conv_transpose2d: bias shape {:?}, expected [{cout}]", b.value().shape()));
            }
        }
        let mut out = kernels::conv2d_adjoint(x.data(), kv.data(), &g, cin);
        if let Some(b) = &bias {
            kernels::add_row_bias(&mut out, b.value().data());
        }
        let value = Tensor::from_vec(&[out_h, out_w, cout], out)?;
        let mut parents = vec![self, kernel];
        if let Some(b) = bias {
            parents.push(b);
        }
        let kshape = ks.to_vec();
        Ok(self.tape.push(
            value,
            &parents,
            Box::new(move |gy, needs| {
                let col = kernels::im2col(gy.data(), &g);
                let rows = g.ho * g.wo;
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); rows * cin];
                    gemm(false, false, rows, g.patch_len(), cin, &col, kv.data(), &mut dx, false);
                    Tensor::from_vec(&[h, w, cin], dx).unwrap()
                });
                let dk = needs[1].then(|| {
                    let mut dk = vec![T::zero(); g.patch_len() * cin];
                    gemm(true, false, g.patch_len(), rows, cin, &col, x.data(), &mut dk, false);
                    Tensor::from_vec(&kshape, dk).unwrap()
                });
                let mut grads = vec![dx, dk];
                if needs.len() == 3 {
                    grads
                        .push(needs[2].then(|| Tensor::from_vec(&[cout], kernels::sum_rows(gy.data(), cout)).unwrap()));
                }
                grads
            }),
        ))
    }

    /// Bicubic resampling of an `[H, W, C]` image to `[out_h, out_w, C]`.
    pub fn resize_bicubic(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (h, w, c) = x.hwc()?;
        if out_h == 0 || out_w == 0 {
            return shape_err("resize_bicubic: empty output".into());
        }
        let my: Rc<Vec<T>> = Rc::new(kernels::bicubic_matrix(h, out_h));
        let mx: Rc<Vec<T>> = Rc::new(kernels::bicubic_matrix(w, out_w));
        let out = kernels::separable_apply(x.data(), h, w, c, &my, out_h, &mx, out_w);
        let value = Tensor::from_vec(&[out_h, out_w, c], out)?;
        Ok(self.unary(value, move |g| {
            let dx = kernels::separable_adjoint(g.data(), h, w, c, &my, out_h, &mx, out_w);
            Tensor::from_vec(&[h, w, c], dx).unwrap()
        }))
    }

    /// Bicubic resize by a scale factor; each output dimension is `round(n·scale)`, at least 1.
    pub fn resize_scale(self, scale: f64) -> Result<Var<'t, T>> {
        let (h, w, _) = self.value().hwc()?;
        let (oh, ow) = scaled_dims(h, w, scale)?;
        self.resize_bicubic(oh, ow)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return shape_err(format!("softmax: axis {axis} out of range for {shape:?}"));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![T::zero(); x.len()];
        let xd = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let m = (0..n).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..n {
                    let e = (xd[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / z;
                }
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let y = Rc::new(value.clone());
        Ok(self.unary(value, move |g| {
            let (yd, gd) = (y.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
                    for j in 0..n {
                        dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            Tensor::from_vec(&shape, dx).unwrap()
        }))
    }

    /// Concatenates `[H, W, Ci]` images along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (h, w, _) = first.value().hwc()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (ph, pw, pc) = p.value().hwc()?;
            if (ph, pw) != (h, w) {
                return shape_err(format!("concat: spatial dims {ph}x{pw} vs {h}x{w}"));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); h * w * total];
        let mut off = 0;
        for (p, &pc) in parts.iter().zip(&widths) {
            let v = p.value();
            for px in 0..h * w {
                out[px * total + off..px * total + off + pc].copy_from_slice(&v.data()[px * pc..(px + 1) * pc]);
            }
            off += pc;
        }
        let value = Tensor::from_vec(&[h, w, total], out)?;
        Ok(first.tape.push(
            value,
            parts,
            Box::new(move |g, needs| {
                let mut off = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&pc, &need)| {
                        let start = off;
                        off += pc;
                        need.then(|| {
                            let mut d = vec![T::zero(); h * w * pc];
                            for px in 0..h * w {
                                d[px * pc..(px + 1) * pc]
                                    .copy_from_slice(&g.data()[px * total + start..px * total + start + pc]);
                            }
                            Tensor::from_vec(&[h, w, pc], d).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Matrix product `[n, k] × [k, m]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), rhs.value());
        let (&[n, k], &[k2, m]) = (a.shape(), b.shape()) else {
            return shape_err(format!("matmul: need 2-D operands, got {:?} and {:?}", a.shape(), b.shape()));
        };
        if k != k2 {
            return shape_err(format!("matmul: inner dims {k} vs {k2}"));
        }
        let mut out = vec![T::zero(); n * m];
        gemm(false, false, n, k, m, a.data(), b.data(), &mut out, false);
        let value = Tensor::from_vec(&[n, m], out)?;
        Ok(self.tape.push(
            value,
            &[self, rhs],
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let mut d = vec![T::zero(); n * k];
                    gemm(false, true, n, m, k, g.data(), b.data(), &mut d, false);
                    Tensor::from_vec(&[n, k], d).unwrap()
                });
                let db = needs[1].then(|| {
                    let mut d = vec![T::zero(); k * m];
                    gemm(true, false, k, n, m, a.data(), g.data(), &mut d, false);
                    Tensor::from_vec(&[k, m], d).unwrap()
                });
                vec![da, db]
            }),
        ))
    }

    /// Adds a `[m]` bias to every row of the last axis.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let m = *x.shape().last().unwrap();
        if bias.value().shape() != [m] {
            return shape_err(format!("add_bias: bias {:?} vs last dim {m}", bias.value().shape()));
        }
        let mut v = (*x).clone();
        kernels::add_row_bias(v.data_mut(), bias.value().data());
        Ok(self.tape.push(
            v,
            &[self, bias],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| Tensor::from_vec(&[m], kernels::sum_rows(g.data(), m)).unwrap()),
                ]
            }),
        ))
    }

    /// Picks rows (pixels) of an `[..., d]` tensor, giving `[idx.len(), d]`.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = *shape.last().unwrap();
        let rows = x.len() / d;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return shape_err(format!("gather_rows: index {bad} out of {rows} rows"));
        }
        if idx.is_empty() {
            return shape_err("gather_rows: empty index list".into());
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec(&[idx.len(), d], out)?;
        Ok(self.unary(value, move |g| {
            let mut dx = Tensor::zeros(&shape);
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..d {
                    dx.data_mut()[i * d + c] += g.data()[r * d + c];
                }
            }
            dx
        }))
    }

    /// Places row blocks back into a `[rows, d]` tensor; `idx[p]` gives the
    /// destination row of every row of `parts[p]`. Rows never written stay zero.
    pub fn scatter_rows(parts: &[Var<'t, T>], idx: &[Rc<Vec<usize>>], rows: usize) -> Result<Var<'t, T>> {
        if parts.is_empty() || parts.len() != idx.len() {
            return shape_err(format!("scatter_rows: {} parts vs {} index lists", parts.len(), idx.len()));
        }
        let d = parts[0].value().shape()[1];
        let mut out = vec![T::zero(); rows * d];
        for (p, ix) in parts.iter().zip(idx) {
            let v = p.value();
            if v.shape() != [ix.len(), d] {
                return shape_err(format!("scatter_rows: part {:?} vs {} rows of width {d}", v.shape(), ix.len()));
            }
            for (r, &i) in ix.iter().enumerate() {
                if i >= rows {
                    return shape_err(format!("scatter_rows: index {i} out of {rows} rows"));
                }
                out[i * d..(i + 1) * d].copy_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let value = Tensor::from_vec(&[rows, d], out)?;
        let idx: Vec<Rc<Vec<usize>>> = idx.to_vec();
        Ok(parts[0].tape.push(
            value,
            parts,
            Box::new(move |g, needs| {
                idx.iter()
                    .zip(needs)
                    .map(|(ix, &need)| {
                        need.then(|| {
                            let mut d_part = Vec::with_capacity(ix.len() * d);
                            for &i in ix.iter() {
                                d_part.extend_from_slice(&g.data()[i * d..(i + 1) * d]);
                            }
                            Tensor::from_vec(&[ix.len(), d], d_part).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Spatial mean of an `[H, W, C]` image, giving `[C]`.
    pub fn mean_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (h, w, c) = x.hwc()?;
        let n = T::from_usize(h * w).unwrap();
        let v: Vec<T> = kernels::sum_rows(x.data(), c).into_iter().map(|s| s / n).collect();
        let value = Tensor::from_vec(&[c], v)?;
        Ok(self.unary(value, move |g| {
            let scaled: Vec<T> = g.data().iter().map(|&v| v / n).collect();
            Tensor::from_fn(&[h, w, c], |i| scaled[i % c])
        }))
    }

    /// Multiplies every channel of an `[H, W, C]` image by the matching entry of `gate: [C]`.
    pub fn mul_channels(self, gate: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, gv) = (self.value(), gate.value());
        let (h, w, c) = x.hwc()?;
        if gv.shape() != [c] {
            return shape_err(format!("mul_channels: gate {:?} vs {c} channels", gv.shape()));
        }
        let value = Tensor::from_fn(&[h, w, c], |i| x.data()[i] * gv.data()[i % c]);
        Ok(self.tape.push(
            value,
            &[self, gate],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| Tensor::from_fn(&[h, w, c], |i| g.data()[i] * gv.data()[i % c])),
                    needs[1].then(|| {
                        let mut acc = vec![T::zero(); c];
                        for (i, (&gi, &xi)) in g.data().iter().zip(x.data()).enumerate() {
                            acc[i % c] += gi * xi;
                        }
                        Tensor::from_vec(&[c], acc).unwrap()
                    }),
                ]
            }),
        ))
    }

    /// Circular shift by `(dy, dx)` pixels.
    pub fn roll(self, dy: isize, dx: isize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (h, w, c) = x.hwc()?;
        let value = Tensor::from_vec(&[h, w, c], kernels::roll(x.data(), h, w, c, dy, dx))?;
        Ok(self
            .unary(value, move |g| Tensor::from_vec(&[h, w, c], kernels::roll(g.data(), h, w, c, -dy, -dx)).unwrap()))
    }
}

fn check_kernel<T: Real>(kv: &Tensor<T>, cin: usize, op: &str) -> Result<(usize, usize)> {
    let ks = kv.shape();
    if ks.len() != 4 || ks[0] != ks[1] || ks[0].is_multiple_of(2) {
        return shape_err(format!("{op}: kernel must be [k,k,Cin,Cout] with odd k, got {ks:?}"));
    }
    if ks[2] != cin {
        return shape_err(format!("{op}: input has {cin} channels, kernel expects {}", ks[2]));
    }
    Ok((ks[0], ks[3]))
}

/// Output dimensions of a resize by `scale`.
pub fn scaled_dims(h: usize, w: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale.is_finite() && scale > 0.0) {
        return shape_err(format!("resize: scale must be positive, got {scale}"));
    }
    let r = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    Ok((r(h), r(w)))
}
