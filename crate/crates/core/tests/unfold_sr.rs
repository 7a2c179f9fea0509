mod common;

use common::*;
use jssu::data::{spatial_degrade, DegradationSpec, ImageCube};
use jssu::gradcheck::{check_against, gradient_check};
use jssu::model::sr::{
    self, down_sr, down_sr_linear, lipschitz_estimate, prime_factors, prox_sr, sr_unfold, up_operator, up_sr, up_steps,
};
use jssu::model::{ModelConfig, ResidualSign, UpSteps, Upsampler};
use jssu::nn::{Binder, Trainable};
use jssu::{Tape, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};

fn sr_cfg(s: usize, up: Upsampler, steps: UpSteps) -> ModelConfig {
    ModelConfig { sampling_factor: s, sr_upsampler: up, sr_steps: steps, ..small_cfg() }
}

#[test]
fn prime_factor_examples() {
    assert_eq!(prime_factors(8), vec![2, 2, 2]);
    assert_eq!(prime_factors(6), vec![2, 3]);
    assert_eq!(prime_factors(1), Vec::<usize>::new());
    assert_eq!(prime_factors(7), vec![7]);
    assert_eq!(prime_factors(9), vec![3, 3]);
    assert_eq!(prime_factors(12), vec![2, 2, 3]);
    for s in 1..200 {
        let f = prime_factors(s);
        assert_eq!(f.iter().product::<usize>(), s);
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
        assert!(f.iter().all(|&p| (2..p).all(|d| p % d != 0)));
    }
}

#[test]
fn single_and_progressive_steps_differ_at_scale_four() {
    let prog = sr_cfg(4, Upsampler::Forward, UpSteps::Progressive);
    let single = sr_cfg(4, Upsampler::Forward, UpSteps::Single);
    assert_eq!(up_steps(&prog), vec![2, 2]);
    assert_eq!(up_steps(&single), vec![4]);
    let (a, b) = (store(&prog, 0), store(&single, 0));
    assert_eq!(a.get("sr.0.up.t1.w").unwrap().shape(), [5, 5, 3, 3]);
    assert_eq!(b.get("sr.0.up.t0.w").unwrap().shape(), [9, 9, 3, 3]);
    assert!(!b.contains("sr.0.up.t1.w"));
    assert_eq!(up_steps(&sr_cfg(6, Upsampler::Bp, UpSteps::Progressive)), vec![3, 2]);
}

#[test]
fn down_chain_shapes() {
    let cfg = sr_cfg(4, Upsampler::Bp, UpSteps::Progressive);
    let params = store(&cfg, 1);
    assert_eq!(params.get("sr.0.down.0.w").unwrap().shape(), [5, 5, 3, 3]);
    assert_eq!(params.get("sr.0.down.1.w").unwrap().shape(), [5, 5, 3, 3]);
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::All);
    let u = tape.constant(rand_tensor(&[8, 8, 3], &mut rng(2)));
    assert_eq!(down_sr(&b, &cfg, 0, u).unwrap().shape(), [2, 2, 3]);
    let bad = tape.constant(rand_tensor(&[6, 8, 3], &mut rng(2)));
    assert!(down_sr(&b, &cfg, 0, bad).is_err());

    let id_cfg = sr_cfg(1, Upsampler::Bp, UpSteps::Progressive);
    let id_params = store(&id_cfg, 1);
    let b = Binder::new(&tape, &id_params, Trainable::All);
    let y = down_sr(&b, &id_cfg, 0, u).unwrap();
    assert_eq!(*y.value(), *u.value());
}

#[test]
fn box_kernel_down_matches_spatial_degrade() {
    let cfg = sr_cfg(2, Upsampler::Bp, UpSteps::Progressive);
    let mut params = store(&cfg, 3);
    let c = 3;
    let mut k = Tensor::zeros(&[5, 5, c, c]);
    for tap in 0..25 {
        for ch in 0..c {
            k.data_mut()[(tap * c + ch) * c + ch] = 1.0 / 25.0;
        }
    }
    set(&mut params, "sr.0.down.0.w", k);
    let x = unit_tensor(&[10, 12, c], &mut rng(4));
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let y = down_sr(&b, &cfg, 0, tape.constant(x.clone())).unwrap();

    let spec = DegradationSpec {
        blur_kernel: vec![1.0 / 25.0; 25],
        blur_size: 5,
        ..DegradationSpec::no_blur(2, vec![vec![1.0]], 0.0).unwrap()
    };
    let cube = ImageCube::from_tensor(x.cast()).unwrap();
    let oracle = spatial_degrade(&cube, &spec, &mut rng(0)).unwrap();
    assert!(max_diff(&y.value(), &oracle.tensor().cast()) < 1e-6);

    let constant = Tensor::full(&[8, 8, c], 0.3);
    let y = down_sr(&b, &cfg, 0, tape.constant(constant)).unwrap();
    for i in 1..3 {
        for j in 1..3 {
            for ch in 0..c {
                assert!((y.value().at3(i, j, ch) - 0.3).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn up_operator_shapes_and_linearity() {
    for s in [2, 3, 4, 6] {
        for up in [Upsampler::Forward, Upsampler::Bp, Upsampler::Adjoint] {
            for steps in [UpSteps::Single, UpSteps::Progressive] {
                let cfg = sr_cfg(s, up, steps);
                let params = store(&cfg, 5);
                let tape = Tape::new();
                let b = Binder::new(&tape, &params, Trainable::All);
                let r = tape.constant(rand_tensor(&[4, 3, 3], &mut rng(6)));
                assert_eq!(up_operator(&b, &cfg, 0, r).unwrap().shape(), [4 * s, 3 * s, 3], "{s} {up:?} {steps:?}");
                let zero = tape.constant(Tensor::zeros(&[4, 3, 3]));
                assert_eq!(up_operator(&b, &cfg, 0, zero).unwrap().value().max_abs(), 0.0);
            }
        }
    }
}

#[test]
fn consistent_estimate_is_a_fixed_point() {
    for up in [Upsampler::Forward, Upsampler::Bp, Upsampler::Adjoint] {
        let cfg = sr_cfg(2, up, UpSteps::Progressive);
        let params = store(&cfg, 7);
        let tape = Tape::new();
        let b = Binder::new(&tape, &params, Trainable::None);
        let u = tape.constant(unit_tensor(&[8, 8, 3], &mut rng(8)));
        let f = tape.constant((*down_sr(&b, &cfg, 0, u).unwrap().value()).clone());
        let step = up_sr(&b, &cfg, 0, u, f).unwrap();
        assert_eq!(step.value().max_abs(), 0.0);
        let tau = b.get("sr.0.tau").unwrap();
        let next = prox_sr(&b, &cfg, 0, u.sub(step.scale_by(tau).unwrap()).unwrap()).unwrap();
        assert_eq!(*next.value(), *u.value());
    }
}

#[test]
fn zero_step_single_stage_is_bicubic() {
    let cfg = sr_cfg(2, Upsampler::Bp, UpSteps::Progressive);
    let mut params = store(&cfg, 9);
    set(&mut params, "sr.0.tau", Tensor::scalar(0.0));
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let f = tape.constant(unit_tensor(&[5, 4, 3], &mut rng(10)));
    let (u, stages) = sr_unfold(&b, &cfg, f).unwrap();
    assert_eq!(stages.len(), 1);
    assert_eq!(*u.value(), *f.resize_bicubic(10, 8).unwrap().value());
}

#[test]
fn per_stage_outputs_and_shapes() {
    let cfg = ModelConfig { stages: 3, ..sr_cfg(3, Upsampler::Bp, UpSteps::Progressive) };
    let mut params = store(&cfg, 11);
    randomize(&mut params, "sr.", 0.2, &mut rng(12));
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::All);
    let (u, stages) = sr_unfold(&b, &cfg, tape.constant(unit_tensor(&[4, 5, 3], &mut rng(13)))).unwrap();
    assert_eq!(stages.len(), 3);
    assert_eq!(u.shape(), [12, 15, 3]);
    assert!(stages.iter().all(|s| s.shape() == [12, 15, 3] && s.value().all_finite()));
}

#[test]
fn adjoint_up_is_the_fidelity_gradient() {
    let cfg = sr_cfg(2, Upsampler::Adjoint, UpSteps::Progressive);
    for seed in 0..5 {
        let mut params = store(&cfg, 20 + seed);
        randomize(&mut params, "sr.0.down", 0.3, &mut rng(30 + seed));
        let mut r = rng(40 + seed);
        let u = rand_tensor(&[6, 6, 3], &mut r);
        let f = rand_tensor(&[3, 3, 3], &mut r);
        let energy = scalar_fn(|t, x| {
            let b = Binder::new(t, &params, Trainable::None);
            Ok(down_sr(&b, &cfg, 0, x)?.sub(t.constant(f.clone()))?.half_sq_norm())
        });
        let analytic = {
            let tape = Tape::new();
            let b = Binder::new(&tape, &params, Trainable::None);
            let g = up_sr(&b, &cfg, 0, tape.constant(u.clone()), tape.constant(f.clone())).unwrap();
            (*g.value()).clone()
        };
        let rep = check_against(energy, &u, analytic, 1e-5, 1e-5).unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error);
        let rep = gradient_check(energy, &u, 1e-5, 1e-5).unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error);
    }
}

/// Dense matrix of the bias-free down chain on an `h×w×c` grid.
fn dense_down(params: &jssu::nn::ParamStore<f64>, cfg: &ModelConfig, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w * cfg.ms_bands;
    let tape = Tape::new();
    let b = Binder::new(&tape, params, Trainable::None);
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let e = Tensor::from_fn(&[h, w, cfg.ms_bands], |j| if i == j { 1.0 } else { 0.0 });
            down_sr_linear(&b, cfg, 0, tape.constant(e)).unwrap().value().data().to_vec()
        })
        .collect();
    DMatrix::from_fn(cols[0].len(), n, |r, c| cols[c][r])
}

#[test]
fn power_iteration_matches_dense_spectrum() {
    let cfg = sr_cfg(2, Upsampler::Adjoint, UpSteps::Progressive);
    let mut params = store(&cfg, 50);
    randomize(&mut params, "sr.0.down", 0.3, &mut rng(51));
    let d = dense_down(&params, &cfg, 6, 6);
    let top = SymmetricEigen::new(d.transpose() * &d).eigenvalues.max();
    let est = lipschitz_estimate(&params, &cfg, 0, (6, 6), 500, &mut rng(52)).unwrap();
    assert!((est - top).abs() <= 1e-6 * top, "{est} vs {top}");
}

#[test]
fn descent_with_identity_prox_and_adjoint_up() {
    let stages = 20;
    let cfg = ModelConfig { stages, ..sr_cfg(2, Upsampler::Adjoint, UpSteps::Progressive) };
    for seed in 0..10 {
        let mut params = store(&cfg, 60 + seed);
        randomize(&mut params, "sr.0.down", 0.3, &mut rng(70 + seed));
        share_stage_params(&mut params, "sr", ".down.", stages);
        let lip = lipschitz_estimate(&params, &cfg, 0, (8, 8), 200, &mut rng(80 + seed)).unwrap();
        for n in 0..stages {
            set(&mut params, &format!("sr.{n}.tau"), Tensor::scalar(0.9 / lip));
        }
        let tape = Tape::new();
        let b = Binder::new(&tape, &params, Trainable::None);
        let f = tape.constant(unit_tensor(&[4, 4, 3], &mut rng(90 + seed)));
        let (_, per_stage) = sr_unfold(&b, &cfg, f).unwrap();
        let fid = |u| down_sr(&b, &cfg, 0, u).unwrap().sub(f).unwrap().half_sq_norm().value().data()[0];
        let u0 = f.resize_bicubic(8, 8).unwrap();
        let mut prev = fid(u0);
        for u in per_stage {
            let cur = fid(u);
            assert!(cur <= prev * (1.0 + 1e-12), "seed {seed}: {cur} > {prev}");
            prev = cur;
        }
    }
}

#[test]
fn additive_sign_flips_the_step() {
    let base = sr_cfg(2, Upsampler::Bp, UpSteps::Progressive);
    let add = ModelConfig { sr_residual_sign: ResidualSign::Additive, ..base.clone() };
    let mut params = store(&base, 100);
    randomize(&mut params, "sr.0.down", 0.3, &mut rng(101));
    let tape = Tape::new();
    let b = Binder::new(&tape, &params, Trainable::None);
    let f = tape.constant(unit_tensor(&[4, 4, 3], &mut rng(102)));
    let u0 = f.resize_bicubic(8, 8).unwrap();
    let (d, _) = sr_unfold(&b, &base, f).unwrap();
    let (a, _) = sr_unfold(&b, &add, f).unwrap();
    // With an identity prox both are u0 ∓ step, so their mean is u0.
    let mid = d.add(a).unwrap().scale(0.5);
    assert!(max_diff(&mid.value(), &u0.value()) < 1e-12);
    assert!(max_diff(&d.value(), &a.value()) > 1e-6);
}

#[test]
fn prox_is_identity_at_init_and_stable_under_perturbation() {
    let cfg = ModelConfig { features: 8, res_blocks: 2, ..small_cfg() };
    let mut params = store(&cfg, 110);
    let tape = Tape::new();
    let x = unit_tensor(&[7, 9, 3], &mut rng(111));
    {
        let b = Binder::new(&tape, &params, Trainable::None);
        assert_eq!(*prox_sr(&b, &cfg, 0, tape.constant(x.clone())).unwrap().value(), x);
    }
    randomize(&mut params, "sr.0.prox", 0.3, &mut rng(112));
    let b = Binder::new(&tape, &params, Trainable::None);
    let base = (*prox_sr(&b, &cfg, 0, tape.constant(x.clone())).unwrap().value()).clone();
    let dir = rand_tensor(&[7, 9, 3], &mut rng(113));
    let mut ratios = Vec::new();
    for delta in [1e-2, 1e-3, 1e-4] {
        let xp = x.zip_map(&dir, |a, d| a + delta * d).unwrap();
        let out = prox_sr(&b, &cfg, 0, tape.constant(xp)).unwrap();
        assert!(out.value().all_finite());
        let change = out.value().zip_map(&base, |a, b| a - b).unwrap();
        ratios.push(change.dot(&change).sqrt() / (delta * dir.dot(&dir).sqrt()));
    }
    assert!(ratios.iter().all(|r| r.is_finite() && *r < 1e3));
    // Locally Lipschitz: the gain settles as delta shrinks.
    assert!((ratios[1] - ratios[2]).abs() <= 0.1 * ratios[2] + 1e-9, "{ratios:?}");
}

#[test]
fn stages_do_not_share_parameters() {
    let cfg = ModelConfig { stages: 2, ..small_cfg() };
    let params = store(&cfg, 120);
    assert_ne!(params.get("sr.0.down.0.w").unwrap(), params.get("sr.1.down.0.w").unwrap());
    let mut store2 = jssu::nn::ParamStore::<f64>::new();
    sr::register(&mut store2, &cfg, &mut rng(0));
    assert_eq!(store2.count("sr.0."), store2.count("sr.1."));
}
