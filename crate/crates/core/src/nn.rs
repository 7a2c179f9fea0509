//! Parameter storage and the small layer vocabulary the solvers are built from.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// False for fitted-but-not-learned state such as k-means centroids.
    pub trainable: bool,
}

/// All weights of a model, keyed by canonical dotted path.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor<T>, trainable: bool) {
        let path = path.into();
        let prev = self.entries.insert(path.clone(), Param { value, trainable });
        assert!(prev.is_none(), "parameter {path} registered twice");
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<T>> {
        self.entries.get(path).map(|p| &p.value).ok_or_else(|| Error::Config(format!("unknown parameter {path}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(path)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {path}")))
    }

    pub fn is_trainable(&self, path: &str) -> bool {
        self.entries.get(path).is_some_and(|p| p.trainable)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count of the parameters under `prefix` ("" for all).
    pub fn count(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.value.len()).sum()
    }

    /// Sets every parameter under `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (_, p) in self.entries.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), trainable: p.trainable }))
                .collect(),
        }
    }

    /// Registers a `k×k` convolution as `prefix.w: [k,k,cin,cout]` and `prefix.b: [cout]`.
    pub fn conv(&mut self, prefix: &str, k: usize, cin: usize, cout: usize, init: Init, rng: &mut impl Rng) {
        let w = init.tensor(&[k, k, cin, cout], k * k * cin, rng);
        self.insert(format!("{prefix}.w"), w, true);
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[cout]), true);
    }

    /// Registers an affine map as `prefix.w: [din, dout]` and `prefix.b: [dout]`.
    pub fn linear(&mut self, prefix: &str, din: usize, dout: usize, init: Init, rng: &mut impl Rng) {
        let w = init.tensor(&[din, dout], din, rng);
        self.insert(format!("{prefix}.w"), w, true);
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[dout]), true);
    }

    pub fn scalar(&mut self, path: &str, value: f64) {
        self.insert(path, Tensor::scalar(T::lit(value)), true);
    }
}

/// Weight initialisation. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / fan_in)`.
    HeUniform,
    Zero,
}

impl Init {
    pub fn tensor<T: Real>(self, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
        match self {
            Init::Zero => Tensor::zeros(shape),
            Init::HeUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
            }
        }
    }
}

/// Which stored parameters become gradient-carrying leaves in a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    None,
    /// Only parameters whose path starts with one of these prefixes.
    Prefixes(Vec<String>),
}

impl Trainable {
    fn admits(&self, path: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::None => false,
            Trainable::Prefixes(ps) => ps.iter().any(|p| path.starts_with(p.as_str())),
        }
    }
}

/// Lazily puts stored parameters onto a tape and maps gradients back to paths.
pub struct Binder<'t, 's, T: Real> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    trainable: Trainable,
    bound: RefCell<HashMap<String, Var<'t, T>>>,
}

impl<'t, 's, T: Real> Binder<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, trainable: Trainable) -> Self {
        Self { tape, store, trainable, bound: RefCell::new(HashMap::new()) }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn get(&self, path: &str) -> Result<Var<'t, T>> {
        if let Some(v) = self.bound.borrow().get(path) {
            return Ok(*v);
        }
        let value = self.store.get(path)?.clone();
        let var = if self.store.is_trainable(path) && self.trainable.admits(path) {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().insert(path.to_string(), var);
        Ok(var)
    }

    /// Gradients of every bound trainable parameter, keyed by path.
    pub fn collect(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.bound.borrow().iter().filter(|(_, v)| v.requires_grad()).map(|(k, v)| (k.clone(), grads.get(*v))).collect()
    }

    pub fn conv(&self, prefix: &str, x: Var<'t, T>, stride: usize) -> Result<Var<'t, T>> {
        let w = self.get(&format!("{prefix}.w"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        let k = w.value().shape()[0];
        x.conv2d(w, Some(b), stride, k / 2)
    }

    /// Affine map on the last axis of a `[n, din]` matrix.
    pub fn linear(&self, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = self.get(&format!("{prefix}.w"))?;
        let b = self.get(&format!("{prefix}.b"))?;
        x.matmul(w)?.add_bias(b)
    }
}

/// Conv-ReLU-conv with an identity skip.
pub fn register_resblock<T: Real>(store: &mut ParamStore<T>, prefix: &str, feat: usize, rng: &mut impl Rng) {
    store.conv(&format!("{prefix}.c1"), 3, feat, feat, Init::HeUniform, rng);
    store.conv(&format!("{prefix}.c2"), 3, feat, feat, Init::HeUniform, rng);
}

pub fn resblock<'t, T: Real>(b: &Binder<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let y = b.conv(&format!("{prefix}.c1"), x, 1)?.relu();
    let y = b.conv(&format!("{prefix}.c2"), y, 1)?;
    x.add(y)
}

/// Residual channel-attention block: conv-ReLU-conv, a squeeze-excite gate, and an identity skip.
pub fn register_rcab<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    feat: usize,
    reduction: usize,
    rng: &mut impl Rng,
) {
    let squeezed = (feat / reduction).max(1);
    store.conv(&format!("{prefix}.c1"), 3, feat, feat, Init::HeUniform, rng);
    store.conv(&format!("{prefix}.c2"), 3, feat, feat, Init::HeUniform, rng);
    store.linear(&format!("{prefix}.ca.down"), feat, squeezed, Init::HeUniform, rng);
    store.linear(&format!("{prefix}.ca.up"), squeezed, feat, Init::HeUniform, rng);
}

pub fn rcab<'t, T: Real>(b: &Binder<'t, '_, T>, prefix: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let y = b.conv(&format!("{prefix}.c1"), x, 1)?.relu();
    let y = b.conv(&format!("{prefix}.c2"), y, 1)?;
    let gate = channel_gate(b, &format!("{prefix}.ca"), y)?;
    x.add(y.mul_channels(gate)?)
}

/// Channel-attention gate in `(0, 1)^C`: pool, bottleneck, sigmoid.
pub fn channel_gate<'t, T: Real>(b: &Binder<'t, '_, T>, prefix: &str, y: Var<'t, T>) -> Result<Var<'t, T>> {
    let c = y.value().shape()[2];
    let pooled = y.mean_pool()?.reshape(&[1, c])?;
    let s = b.linear(&format!("{prefix}.down"), pooled)?.relu();
    b.linear(&format!("{prefix}.up"), s)?.sigmoid().reshape(&[c])
}
