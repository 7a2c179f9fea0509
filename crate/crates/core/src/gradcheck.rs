//! Finite-difference verification of reverse-mode gradients (64-bit).

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub analytic: Tensor<f64>,
    pub numeric: Tensor<f64>,
    pub max_rel_error: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: usize,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Component-wise relative error between two gradients.
///
/// The denominator is `max(|a|, |n|, 1e-3·scale, 1e-6)` where `scale` is the
/// larger infinity norm of the two, so components far below the gradient's
/// own magnitude are judged against that magnitude instead of against zero.
pub fn compare(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> (f64, usize) {
    let scale = analytic.max_abs().max(numeric.max_abs());
    let floor = (1e-3 * scale).max(1e-6);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

/// Evaluates `function` at `input` with a fresh tape.
pub fn evaluate<F>(function: &F, input: &Tensor<f64>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = function(&tape, x)?;
    let v = y.value();
    if v.len() != 1 {
        return Err(Error::Shape(format!("gradient check needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Compares the reverse-mode gradient of a scalar function with central differences.
pub fn gradient_check<F>(function: F, input: &Tensor<f64>, step: f64, tol: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = function(&tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(x);
    numeric_report(&function, input, analytic, step, tol)
}

/// Like [`gradient_check`] but with an analytic gradient supplied by the caller,
/// e.g. a hand-written adjoint.
pub fn check_against<F>(
    function: F,
    input: &Tensor<f64>,
    analytic: Tensor<f64>,
    step: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    input.check_same_shape(&analytic)?;
    numeric_report(&function, input, analytic, step, tol)
}

fn numeric_report<F>(
    function: &F,
    input: &Tensor<f64>,
    analytic: Tensor<f64>,
    step: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if let Some(i) = analytic.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("analytic gradient non-finite at index {i}")));
    }
    let mut probe = input.clone();
    let mut numeric = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = evaluate(function, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = evaluate(function, &probe)?;
        probe.data_mut()[i] = orig;
        let d = (plus - minus) / (2.0 * step);
        if !d.is_finite() {
            return Err(Error::Numerical(format!("finite difference non-finite at index {i}")));
        }
        numeric.data_mut()[i] = d;
    }
    let (max_rel_error, worst_index) = compare(&analytic, &numeric);
    Ok(GradReport { analytic, numeric, max_rel_error, worst_index, tol })
}
