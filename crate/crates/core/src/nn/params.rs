use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// Dense tensor of up to two dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Xoshiro256) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..shape.iter().product())
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        }
    }

    /// Matrix view: vectors are treated as a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            more => (more[..more.len() - 1].iter().product(), *more.last().unwrap()),
        }
    }
}

/// Named tensors in a fixed (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Round every value to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Put every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let (r, c) = t.matrix_dims();
                let v = if trainable {
                    g.param(t.data.clone(), r, c)
                } else {
                    g.constant(t.data.clone(), r, c)
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    /// Collect gradients for every bound parameter, shaped like the store.
    pub fn gradients(&self, grads: &Gradients, g: &Graph, like: &ParamStore) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, &v) in &self.vars {
            let shape = like.get(name).map(|t| t.shape.clone()).unwrap_or_default();
            out.insert(
                name.clone(),
                Tensor {
                    shape,
                    data: grads.get(v, g),
                },
            );
        }
        out
    }
}
