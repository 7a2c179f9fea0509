mod common;

use common::*;
use jssu::gradcheck::gradient_check;
use jssu::model::fusion::{context, fusion_gradient, fusion_unfold, hfi, lfe, low_pass, prox_fus, FusionContext};
use jssu::model::{forward, ModelConfig};
use jssu::nn::{Binder, ParamStore, Trainable};
use jssu::{Tape, Tensor};
use rand::Rng;

fn zero_biases(params: &mut ParamStore<f64>, prefix: &str) {
    for (path, p) in params.iter_mut() {
        if path.starts_with(prefix) && path.ends_with(".b") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
}

#[test]
fn lfe_shapes_and_zero_input() {
    let cfg = small_cfg();
    let mut params = store(&cfg, 1);
    let tape = Tape::new();
    let mut r = rng(2);
    {
        let b = Binder::new(&tape, &params, Trainable::None);
        let msi = tape.constant(unit_tensor(&[6, 4, 3], &mut r));
        let hsi = tape.constant(unit_tensor(&[6, 4, 5], &mut r));
        assert_eq!(lfe(&b, "fus.0.lfe_sr", low_pass(msi, 2).unwrap()).unwrap().shape(), [6, 4, 5]);
        assert_eq!(lfe(&b, "fus.0.lfe_ssr", hsi).unwrap().shape(), [6, 4, 5]);
    }
    zero_biases(&mut params, "fus.0.lfe_ssr");
    let b = Binder::new(&tape, &params, Trainable::None);
    let y = lfe(&b, "fus.0.lfe_ssr", tape.constant(Tensor::zeros(&[6, 4, 5]))).unwrap();
    assert_eq!(y.value().max_abs(), 0.0);
}

#[test]
fn low_pass_keeps_constants() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(&[8, 12, 3], |i| [0.2, 0.5, 0.9][i % 3]));
    let y = low_pass(x, 4).unwrap();
    assert!(max_diff(&y.value(), &x.value()) < 1e-12);
    assert!(low_pass(x, 3).is_err());
}

#[test]
fn hfi_is_deterministic_and_every_input_is_connected() {
    let cfg = small_cfg();
    let mut params = store(&cfg, 3);
    randomize(&mut params, "fus.0.hfi", 0.4, &mut rng(4));
    let mut r = rng(5);
    let inputs = [unit_tensor(&[6, 6, 3], &mut r), unit_tensor(&[6, 6, 5], &mut r), unit_tensor(&[6, 6, 5], &mut r)];
    let readout = rand_tensor(&[6, 6, 5], &mut r);
    let run = |tape: &Tape<f64>| {
        let b = Binder::new(tape, &params, Trainable::None);
        let [a, c, d] = inputs.clone().map(|t| tape.constant(t));
        hfi(&b, "fus.0.hfi", a, c, d).unwrap().value()
    };
    let first = run(&Tape::new());
    assert_eq!(first.shape(), [6, 6, 5]);
    assert_eq!(*first, *run(&Tape::new()));

    for which in 0..3 {
        let f = scalar_fn(|t, x| {
            let b = Binder::new(t, &params, Trainable::None);
            let mut v: Vec<_> = inputs.iter().map(|i| t.constant(i.clone())).collect();
            v[which] = x;
            hfi(&b, "fus.0.hfi", v[0], v[1], v[2])?.mul(t.constant(readout.clone())).map(|y| y.sum())
        });
        let rep = gradient_check(f, &inputs[which], 1e-6, 1e-5).unwrap();
        assert!(rep.passed(), "input {which}: {}", rep.max_rel_error);
        assert!(rep.analytic.max_abs() > 1e-6, "input {which} disconnected");
    }
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let v = inputs.clone().map(|t| tape.constant(t));
    assert!(hfi(&b, "fus.0.hfi", v[0], v[1], tape.constant(Tensor::zeros(&[6, 5, 5]))).is_err());
}

fn random_ctx<'t>(tape: &'t Tape<f64>, seed: u64, shape: &[usize]) -> FusionContext<'t, f64> {
    let mut r = rng(seed);
    // Keep ū_SR away from zero so no clamping happens.
    let bar_sr = Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(0.2..1.5);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let bar_ssr = rand_tensor(shape, &mut r);
    let hat_sr = rand_tensor(shape, &mut r);
    FusionContext::new(tape.constant(bar_sr), tape.constant(bar_ssr), tape.constant(hat_sr), 1e-6).unwrap()
}

#[test]
fn gradient_vanishes_at_the_stationary_point() {
    for seed in 0..5 {
        let tape = Tape::new();
        let ctx = random_ctx(&tape, seed, &[5, 4, 6]);
        let star = tape.constant(ctx.stationary_point().unwrap());
        let g = fusion_gradient(star, &ctx).unwrap();
        assert!(g.value().max_abs() <= 1e-6, "{}", g.value().max_abs());
    }
}

#[test]
fn stationary_point_clamps_small_divisors() {
    let tape = Tape::new();
    let t = |v: Vec<f64>| tape.constant(Tensor::from_vec(&[1, 1, 3], v).unwrap());
    let ctx =
        FusionContext::new(t(vec![0.0, -1e-9, 2.0]), t(vec![1.0, 1.0, 1.0]), t(vec![1e-6, 1e-6, 4.0]), 1e-6).unwrap();
    let star = ctx.stationary_point().unwrap();
    assert!(star.data().iter().all(|v| v.is_finite()));
    assert!((star.data()[0] - 1.0).abs() < 1e-12);
    assert!((star.data()[1] + 1.0).abs() < 1e-12);
    assert_eq!(star.data()[2], 2.0);
    assert!(
        FusionContext::new(t(vec![1.0; 3]), t(vec![1.0; 3]), tape.constant(Tensor::zeros(&[1, 3, 1])), 1e-6).is_err()
    );
}

#[test]
fn unit_modulation_gives_plain_residual() {
    let tape = Tape::new();
    let mut r = rng(6);
    let shape = [4, 4, 3];
    let bar_ssr = rand_tensor(&shape, &mut r);
    let hat_sr = rand_tensor(&shape, &mut r);
    let u = rand_tensor(&shape, &mut r);
    let ctx = FusionContext::new(
        tape.constant(Tensor::from_fn(&shape, |_| 1.0)),
        tape.constant(bar_ssr.clone()),
        tape.constant(hat_sr.clone()),
        1e-6,
    )
    .unwrap();
    let g = fusion_gradient(tape.constant(u.clone()), &ctx).unwrap();
    let expect = Tensor::from_fn(&shape, |i| u.data()[i] - bar_ssr.data()[i] * hat_sr.data()[i]);
    assert!(max_diff(&g.value(), &expect) < 1e-15);
}

#[test]
fn fusion_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let tape = Tape::new();
        let ctx = random_ctx(&tape, 10 + seed, &[6, 6, 4]);
        let vals = [ctx.u_bar_sr.value(), ctx.u_bar_ssr.value(), ctx.u_hat_sr.value()];
        let u = rand_tensor(&[6, 6, 4], &mut rng(20 + seed));
        let analytic = fusion_gradient(tape.constant(u.clone()), &ctx).unwrap().value();
        let energy = scalar_fn(|t, x| {
            let c = FusionContext::new(
                t.constant((*vals[0]).clone()),
                t.constant((*vals[1]).clone()),
                t.constant((*vals[2]).clone()),
                1e-6,
            )?;
            c.energy(x)
        });
        let rep = jssu::gradcheck::check_against(energy, &u, (*analytic).clone(), 1e-6, 1e-6).unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error);
    }
}

#[test]
fn prox_is_identity_at_init_and_guided_by_u_sr() {
    let cfg = small_cfg();
    let mut params = store(&cfg, 7);
    let mut r = rng(8);
    let x = rand_tensor(&[4, 6, 5], &mut r);
    let g1 = unit_tensor(&[4, 6, 3], &mut r);
    let g2 = unit_tensor(&[4, 6, 3], &mut r);
    let tape = Tape::new();
    {
        let b = Binder::new(&tape, &params, Trainable::None);
        let y = prox_fus(&b, &cfg, 0, tape.constant(x.clone()), tape.constant(g1.clone())).unwrap();
        assert_eq!(*y.value(), x);
    }
    randomize(&mut params, "fus.0.prox", 0.5, &mut rng(9));
    let b = Binder::new(&tape, &params, Trainable::None);
    let y1 = prox_fus(&b, &cfg, 0, tape.constant(x.clone()), tape.constant(g1)).unwrap();
    let y2 = prox_fus(&b, &cfg, 0, tape.constant(x.clone()), tape.constant(g2)).unwrap();
    assert_eq!(y1.shape(), [4, 6, 5]);
    assert!(max_diff(&y1.value(), &y2.value()) > 1e-6);
    assert!(prox_fus(&b, &cfg, 0, tape.constant(x), tape.constant(Tensor::zeros(&[4, 5, 3]))).is_err());
}

#[test]
fn zero_step_single_stage_returns_the_hfi_initialisation() {
    let cfg = small_cfg();
    let mut params = store(&cfg, 11);
    set(&mut params, "fus.0.tau", Tensor::scalar(0.0));
    let mut r = rng(12);
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let u_sr = tape.constant(unit_tensor(&[8, 6, 3], &mut r));
    let u_ssr = tape.constant(unit_tensor(&[4, 3, 5], &mut r));
    let (u, stages) = fusion_unfold(&b, &cfg, u_sr, u_ssr).unwrap();
    assert_eq!(stages.len(), 1);
    let up = u_ssr.resize_bicubic(8, 6).unwrap();
    let bar = lfe(&b, "fus.init.lfe_sr", low_pass(u_sr, 2).unwrap()).unwrap();
    let init = hfi(&b, "fus.init.hfi", u_sr, up, bar).unwrap();
    assert_eq!(*u.value(), *init.value());

    let three = ModelConfig { stages: 3, ..cfg.clone() };
    let p3 = store(&three, 13);
    let b3 = Binder::new(&tape, &p3, Trainable::None);
    assert_eq!(fusion_unfold(&b3, &three, u_sr, u_ssr).unwrap().1.len(), 3);
    assert!(fusion_unfold(&b, &cfg, u_sr, tape.constant(Tensor::zeros(&[3, 3, 5]))).is_err());
}

#[test]
fn energy_descends_with_fixed_context_and_identity_prox() {
    for seed in 0..5 {
        let cfg = small_cfg();
        let params = store(&cfg, 30 + seed);
        let mut r = rng(40 + seed);
        let tape = Tape::new();
        let b = Binder::new(&tape, &params, Trainable::None);
        let u_sr = tape.constant(unit_tensor(&[6, 6, 3], &mut r));
        let u_ssr_up = tape.constant(unit_tensor(&[6, 6, 5], &mut r));
        let ctx = context(&b, &cfg, 0, u_sr, u_ssr_up).unwrap();
        let lmax = ctx.u_bar_sr.value().data().iter().map(|v| v * v).fold(0.0, f64::max);
        let tau = 1.0 / lmax.max(1e-12);
        let mut u = tape.constant(rand_tensor(&[6, 6, 5], &mut r));
        let mut e = ctx.energy(u).unwrap().value().data()[0];
        for _ in 0..20 {
            u = u.sub(fusion_gradient(u, &ctx).unwrap().scale(tau)).unwrap();
            let next = ctx.energy(u).unwrap().value().data()[0];
            assert!(next <= e + 1e-12, "seed {seed}: {next} > {e}");
            e = next;
        }
    }
}

#[test]
fn pipeline_output_shapes() {
    let cfg = ModelConfig { stages: 2, ..small_cfg() };
    let params = store(&cfg, 50);
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let f = tape.constant(unit_tensor(&[3, 4, 3], &mut rng(51)));
    let out = forward(&b, &cfg, f, true).unwrap();
    assert_eq!(out.u_sr.shape(), [6, 8, 3]);
    assert_eq!(out.u_ssr.shape(), [3, 4, 5]);
    assert_eq!(out.u_fus.shape(), [6, 8, 5]);
    assert_eq!(out.output.shape(), [6, 8, 5]);
    assert_eq!((out.sr_stages.len(), out.ssr_stages.len(), out.fus_stages.len()), (2, 2, 2));
}
