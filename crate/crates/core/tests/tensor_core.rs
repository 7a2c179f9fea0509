use std::rc::Rc;

use jssu::gradcheck::gradient_check;
use jssu::kernels::cubic_weight;
use jssu::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct six-nested-loop convolution.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let ho = (h + 2 * pad - ks) / stride + 1;
    let wo = (w + 2 * pad - ks) / stride + 1;
    let mut out = Tensor::zeros(&[ho, wo, cout]);
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..cout {
                let mut acc = bias.map_or(0.0, |b| b[co]);
                for ky in 0..ks {
                    for kx in 0..ks {
                        for ci in 0..cin {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc +=
                                x.at3(iy as usize, ix as usize, ci) * k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out.data_mut()[(oy * wo + ox) * cout + co] = acc;
            }
        }
    }
    out
}

/// Bicubic resize evaluated pixel by pixel from the 2-D tensor-product formula.
fn bicubic_oracle(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[oh, ow, c]);
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
            for ch in 0..c {
                let mut acc = 0.0;
                for ty in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                    for tx in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                        let wy = cubic_weight(sy - ty as f64);
                        let wx = cubic_weight(sx - tx as f64);
                        let cy = ty.clamp(0, h as i64 - 1) as usize;
                        let cx = tx.clamp(0, w as i64 - 1) as usize;
                        acc += wy * wx * x.at3(cy, cx, ch);
                    }
                }
                out.data_mut()[(oy * ow + ox) * c + ch] = acc;
            }
        }
    }
    out
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&[4, 4, 1], &mut rng));
    let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = x.conv2d(k, None, 1, 0).unwrap();
    assert_eq!(*y.value(), *x.value());
}

#[test]
fn conv_stride_two_shape() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4, 4, 1]));
    let k = tape.constant(Tensor::zeros(&[3, 3, 1, 1]));
    assert_eq!(x.conv2d(k, None, 2, 1).unwrap().shape(), vec![2, 2, 1]);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
        let xv = rand_tensor(&[5, 5, 2], &mut rng);
        let kv = rand_tensor(&[3, 3, 2, 3], &mut rng);
        let bv = rand_tensor(&[3], &mut rng);
        let tape = Tape::new();
        let y = tape
            .constant(xv.clone())
            .conv2d(tape.constant(kv.clone()), Some(tape.constant(bv.clone())), stride, pad)
            .unwrap();
        let expected = conv_oracle(&xv, &kv, Some(bv.data()), stride, pad);
        assert!(max_diff(&y.value(), &expected) < 1e-6, "stride {stride} pad {pad}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4, 4, 2]));
    let k = tape.constant(Tensor::zeros(&[3, 3, 3, 1]));
    assert!(matches!(x.conv2d(k, None, 1, 1), Err(jssu::Error::Shape(_))));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for stride in [1, 2, 3] {
        let k = 2 * stride + 1;
        let (h, w) = (6 * stride, 3 * stride);
        let kv = rand_tensor(&[k, k, 2, 3], &mut rng);
        let u = rand_tensor(&[h, w, 2], &mut rng);
        let v = rand_tensor(&[h / stride, w / stride, 3], &mut rng);
        let tape = Tape::new();
        let kvar = tape.constant(kv.clone());
        let lu = tape.constant(u.clone()).conv2d(kvar, None, stride, k / 2).unwrap();
        let ltv = tape.constant(v.clone()).conv_transpose2d(kvar, None, stride).unwrap();
        assert_eq!(ltv.shape(), vec![h, w, 2]);
        let lhs = lu.value().dot(&v);
        let rhs = u.dot(&ltv.value());
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()), "stride {stride}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv_transpose_shape_and_linearity() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 2, 1]));
    let k = tape.constant(Tensor::full(&[5, 5, 1, 1], 0.3));
    let y = x.conv_transpose2d(k, None, 2).unwrap();
    assert_eq!(y.shape(), vec![4, 4, 1]);
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn bicubic_preserves_constants() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[8, 8, 2], 0.37));
    for scale in [2.0, 0.5, 1.5, 3.0] {
        let y = x.resize_scale(scale).unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 0.37).abs() < 1e-12), "scale {scale}");
    }
    assert_eq!(x.resize_scale(2.0).unwrap().shape(), vec![16, 16, 2]);
}

#[test]
fn bicubic_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Smooth image: low-order trigonometric surface per channel.
    let (a, b): (f64, f64) = (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5));
    let img = Tensor::from_fn(&[12, 10, 3], |i| {
        let (y, x, c) = (i / 30, (i / 3) % 10, i % 3);
        (a * y as f64 + c as f64).sin() * (b * x as f64).cos()
    });
    let tape = Tape::new();
    let down = tape.constant(img.clone()).resize_bicubic(6, 5).unwrap();
    let up = down.resize_bicubic(12, 10).unwrap();
    let down_ref = bicubic_oracle(&img, 6, 5);
    let up_ref = bicubic_oracle(&down_ref, 12, 10);
    assert!(max_diff(&down.value(), &down_ref) < 1e-6);
    assert!(max_diff(&up.value(), &up_ref) < 1e-6);
}

#[test]
fn softmax_closed_forms() {
    let tape = Tape::<f64>::new();
    let eq = tape.constant(Tensor::full(&[2, 5], 3.0)).softmax(1).unwrap();
    assert!(eq.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let two = tape.constant(Tensor::from_vec(&[2], vec![0.0, 3f64.ln()]).unwrap()).softmax(0).unwrap();
    assert!((two.value().data()[0] - 0.25).abs() < 1e-15);
    assert!((two.value().data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[3, 4, 5], &mut rng).map(|v| v * 20.0);
    let tape = Tape::new();
    for axis in 0..3 {
        let y = tape.constant(x.clone()).softmax(axis).unwrap();
        let s = x.shape().to_vec();
        let stride: usize = s[axis + 1..].iter().product();
        for i in 0..x.len() {
            let base = i - ((i / stride) % s[axis]) * stride;
            let denom: f64 = (0..s[axis]).map(|j| x.data()[base + j * stride].exp()).sum();
            let expected = x.data()[i].exp() / denom;
            assert!((y.value().data()[i] - expected).abs() < 1e-7);
        }
    }
}

#[test]
fn gradcheck_half_squared_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = rand_tensor(&[4, 4, 2], &mut rng);
    let r = gradient_check(|_, x| Ok(x.half_sq_norm()), &u, 1e-5, 1e-8).unwrap();
    assert!(r.passed(), "{}", r.max_rel_error);
    assert!(max_diff(&r.analytic, &u) < 1e-14);
}

#[test]
fn gradcheck_conv_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = rand_tensor(&[6, 6, 2], &mut rng);
    let k = rand_tensor(&[3, 3, 2, 2], &mut rng);
    let f = rand_tensor(&[3, 3, 2], &mut rng);
    let r = gradient_check(
        |t, x| {
            let y = x.conv2d(t.constant(k.clone()), None, 2, 1)?;
            Ok(y.sub(t.constant(f.clone()))?.half_sq_norm())
        },
        &u,
        1e-5,
        1e-5,
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_error);
}

#[test]
fn gradcheck_constant_softmax_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = rand_tensor(&[3, 4], &mut rng);
    let r = gradient_check(|_, x| Ok(x.softmax(1)?.sum()), &u, 1e-5, 1e-5).unwrap();
    assert!(r.analytic.max_abs() < 1e-12);
    assert!(r.numeric.max_abs() < 1e-8);
}

/// Random weighted readout so every output entry matters.
fn readout<'t>(t: &'t Tape<f64>, y: jssu::Var<'t, f64>, seed: u64) -> jssu::Result<jssu::Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_tensor(&y.shape(), &mut rng));
    Ok(y.mul(w)?.sum())
}

#[test]
fn gradcheck_every_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = rand_tensor(&[5, 6, 3], &mut rng);
    let k3 = rand_tensor(&[3, 3, 3, 2], &mut rng);
    let b2 = rand_tensor(&[2], &mut rng);
    let kt = rand_tensor(&[5, 5, 2, 3], &mut rng);
    let gate = rand_tensor(&[3], &mut rng);
    let other = rand_tensor(&[5, 6, 3], &mut rng);
    let w = rand_tensor(&[3, 4], &mut rng);
    let idx = Rc::new(vec![4usize, 0, 17, 9]);

    type Check = Box<dyn for<'t> Fn(&'t Tape<f64>, jssu::Var<'t, f64>) -> jssu::Result<jssu::Var<'t, f64>>>;
    let checks: Vec<(&str, Tensor<f64>, Check)> = vec![
        ("conv2d input", img.clone(), {
            let (k, b) = (k3.clone(), b2.clone());
            Box::new(move |t, x| readout(t, x.conv2d(t.constant(k.clone()), Some(t.constant(b.clone())), 2, 1)?, 1))
        }),
        ("conv2d kernel", k3.clone(), {
            let im = img.clone();
            Box::new(move |t, k| readout(t, t.constant(im.clone()).conv2d(k, None, 1, 1)?, 2))
        }),
        ("conv2d bias", b2.clone(), {
            let (im, k) = (img.clone(), k3.clone());
            Box::new(move |t, b| readout(t, t.constant(im.clone()).conv2d(t.constant(k.clone()), Some(b), 1, 1)?, 3))
        }),
        ("conv_transpose2d input", rand_tensor(&[3, 2, 3], &mut rng), {
            let k = kt.clone();
            Box::new(move |t, x| readout(t, x.conv_transpose2d(t.constant(k.clone()), None, 2)?, 4))
        }),
        ("conv_transpose2d kernel", kt.clone(), {
            let x = rand_tensor(&[3, 2, 3], &mut rng);
            Box::new(move |t, k| readout(t, t.constant(x.clone()).conv_transpose2d(k, None, 2)?, 5))
        }),
        ("bicubic", img.clone(), Box::new(|t, x| readout(t, x.resize_bicubic(9, 13)?, 6))),
        ("softmax", img.clone(), Box::new(|t, x| readout(t, x.softmax(2)?, 7))),
        ("sigmoid", img.clone(), Box::new(|t, x| readout(t, x.sigmoid(), 8))),
        ("mul", img.clone(), {
            let o = other.clone();
            Box::new(move |t, x| readout(t, x.mul(t.constant(o.clone()))?.mul(x)?, 9))
        }),
        ("concat", img.clone(), {
            let o = other.clone();
            Box::new(move |t, x| readout(t, jssu::Var::concat_channels(&[x, t.constant(o.clone()), x])?, 10))
        }),
        ("matmul+bias", img.clone(), {
            let (w, b) = (w.clone(), rand_tensor(&[4], &mut rng));
            Box::new(move |t, x| {
                readout(t, x.reshape(&[30, 3])?.matmul(t.constant(w.clone()))?.add_bias(t.constant(b.clone()))?, 11)
            })
        }),
        ("gather/scatter", img.clone(), {
            let idx = idx.clone();
            Box::new(move |t, x| {
                let flat = x.reshape(&[30, 3])?;
                let part = flat.gather_rows(idx.clone())?;
                readout(t, jssu::Var::scatter_rows(&[part.scale(2.0)], std::slice::from_ref(&idx), 30)?, 12)
            })
        }),
        ("channel gate", img.clone(), {
            let g = gate.clone();
            Box::new(move |t, x| {
                let pooled = x.mean_pool()?;
                readout(t, x.mul_channels(pooled.mul(t.constant(g.clone()))?.sigmoid())?, 13)
            })
        }),
        ("roll", img.clone(), Box::new(|t, x| readout(t, x.roll(2, -3)?, 14))),
        ("scale_by", Tensor::scalar(0.7), {
            let im = img.clone();
            Box::new(move |t, s| readout(t, t.constant(im.clone()).scale_by(s)?, 15))
        }),
    ];
    for (name, input, f) in checks {
        let r = gradient_check(f, &input, 1e-5, 1e-5).unwrap();
        assert!(r.passed(), "{name}: max rel error {}", r.max_rel_error);
    }
}

#[test]
fn adjointness_via_backward_pass() {
    // For a linear map recorded on the tape, backward with cotangent v gives Lᵀv.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let u = rand_tensor(&[8, 6, 2], &mut rng);
    let k = rand_tensor(&[5, 5, 2, 3], &mut rng);
    let tape = Tape::new();
    let x = tape.leaf(u.clone());
    let y = x.conv2d(tape.constant(k), None, 2, 2).unwrap().resize_bicubic(7, 5).unwrap().roll(1, 1).unwrap();
    let v = rand_tensor(&y.shape(), &mut rng);
    let lt_v = tape.backward_with(y, v.clone()).unwrap().get(x);
    let lhs = y.value().dot(&v);
    let rhs = u.dot(&lt_v);
    assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()));
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = rand_tensor(&[6, 6, 3], &mut rng).cast::<f32>();
        let k = rand_tensor(&[3, 3, 3, 4], &mut rng).cast::<f32>();
        let tape = Tape::new();
        let kv = tape.leaf(k);
        let y = tape.constant(u).conv2d(kv, None, 1, 1).unwrap().relu().softmax(2).unwrap().sum();
        let g = tape.backward(y).unwrap().get(kv);
        (y.value().data()[0].to_bits(), g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn every_reachable_leaf_gets_a_gradient() {
    let tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::full(&[2, 2, 1], 1.0));
    let b = tape.leaf(Tensor::full(&[2, 2, 1], 2.0));
    let unused = tape.leaf(Tensor::full(&[1], 0.0));
    let y = a.mul(b).unwrap().sum();
    let g = tape.backward(y).unwrap();
    assert!(g.reached(a) && g.reached(b) && !g.reached(unused));
    assert_eq!(g.get(a).data(), &[2.0; 4]);
}
