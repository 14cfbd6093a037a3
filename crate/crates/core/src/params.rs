//! Named parameter storage and per-graph bindings.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanInUniform {
        fan_in: usize,
    },
    Zeros,
}

/// Declared shape and initialization of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Shape, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            init,
        }
    }
}

/// Parameters keyed by name, iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    /// Draws every spec in declaration order from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in specs {
            let data = match spec.init {
                Init::Zeros => vec![T::zero(); spec.shape.numel()],
                Init::FanInUniform { fan_in } => {
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..spec.shape.numel())
                        .map(|_| T::lit(rng.random_range(-bound..bound)))
                        .collect()
                }
            };
            store.insert(
                spec.name.clone(),
                Tensor::new(spec.shape, data).expect("spec shape"),
            );
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that every spec is present with the declared shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            match self.get(&spec.name) {
                None => {
                    return Err(Error::contract(format!(
                        "missing parameter `{}`",
                        spec.name
                    )))
                }
                Some(t) if t.shape() != spec.shape => {
                    return Err(Error::dim(format!(
                        "parameter `{}` has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Bindings {
        Bindings {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Parameter name to graph handle for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bindings {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients after a backward pass, keyed by parameter name.
    pub fn grads<T: Float>(&self, g: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let grad = g
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (k.clone(), grad)
            })
            .collect()
    }
}
