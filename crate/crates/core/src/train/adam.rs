use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are created lazily, shaped like their parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient. Non-finite
    /// gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        for (path, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for {path}")));
            }
            let p = params.get(path)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {path} of {:?}", g.shape(), p.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (path, g) in grads {
            let p = params.get_mut(path)?;
            let m = self.m.entry(path.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(path.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi as f64;
                let mn = BETA1 * *mi as f64 + (1.0 - BETA1) * gi;
                let vn = BETA2 * *vi as f64 + (1.0 - BETA2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + EPS);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
