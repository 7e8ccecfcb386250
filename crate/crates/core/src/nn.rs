//! Named parameter storage and the few layer helpers shared by the model parts.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Checks that `name` exists with the given shape.
    pub fn expect_shape(&self, name: &str, shape: (usize, usize)) -> Result<()> {
        let t = self.get(name)?;
        if t.dim() != shape {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                t.dim()
            )));
        }
        Ok(())
    }
}

/// Binds parameters into a [`Graph`] on first use and remembers which node
/// each one became, so gradients can be routed back by name.
pub struct Binder<'p> {
    params: &'p ParamStore,
    trainable: bool,
    bound: BTreeMap<String, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ParamStore, trainable: bool) -> Self {
        Self {
            params,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self.params.get(name)?.clone();
        let v = if self.trainable {
            g.param(value)
        } else {
            g.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }
}

/// `x W + b` with parameters `{prefix}.w` and `{prefix}.b`.
pub fn linear(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Result<Var> {
    let w = b.var(g, &format!("{prefix}.w"))?;
    let bias = b.var(g, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, bias))
}

/// Row layer norm with learned gain `{prefix}.g` and shift `{prefix}.b`.
pub fn layer_norm(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Result<Var> {
    let gain = b.var(g, &format!("{prefix}.g"))?;
    let shift = b.var(g, &format!("{prefix}.b"))?;
    let n = g.layer_norm_rows(x, 1e-5);
    let scaled = g.mul_row(n, gain);
    Ok(g.add_row(scaled, shift))
}

pub fn init_linear(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    store.insert(format!("{prefix}.w"), normal(rng, (fan_in, fan_out), std));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, fan_out)));
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.g"), Array2::ones((1, width)));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, width)));
}

pub fn normal(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}
