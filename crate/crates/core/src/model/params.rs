use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Normalization scale/shift.
    Norm,
    /// Running statistics; stored and checkpointed but never optimized.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f32>,
}

/// Named parameter storage in insertion order. Values are `f32`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind, value: Vec<f32>) {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if let Some(&i) = self.index.get(&name) {
            self.params[i] = Param {
                name,
                shape: shape.to_vec(),
                kind,
                value,
            };
            return;
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            kind,
            value,
        });
    }

    /// Removes every parameter whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|p| !p.name.starts_with(prefix));
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|p| p.name.starts_with(prefix))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Leaf tensors for one forward pass. With `track`, trainable
    /// parameters collect gradients.
    pub fn bind(&self, track: bool) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                Tensor::from_f32(&p.shape, &p.value, track && p.kind.trainable())
                    .expect("parameter shapes are validated on insertion")
            })
            .collect();
        Bound {
            tensors,
            index: self.index.clone(),
            running: RefCell::new(Vec::new()),
        }
    }
}

/// A [`ParamSet`] bound to graph leaves for one forward/backward pass.
pub struct Bound {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    /// Batch statistics produced by batch-norm layers in training mode:
    /// (layer prefix, mean, var).
    pub(crate) running: RefCell<Vec<(String, Vec<f64>, Vec<f64>)>>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not present in the model")))
    }

    /// (name, gradient) for every parameter that received one.
    pub fn grads(&self) -> HashMap<String, Vec<f64>> {
        self.index
            .iter()
            .filter_map(|(name, &i)| self.tensors[i].grad().map(|g| (name.clone(), g)))
            .collect()
    }
}

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform(rng: &mut Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.range(-bound, bound) as f32).collect()
}

/// U(-b, b) with b = 1 / sqrt(fan_in).
pub fn fan_in_uniform(rng: &mut Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.range(-bound, bound) as f32).collect()
}
