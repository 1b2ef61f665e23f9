use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// Graph handles for a [`ParamSet`], in declaration order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    /// Builds handles from vars already recorded in a graph.
    pub fn from_vars(set: &ParamSet, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != set.len() {
            return Err(Error::Contract(format!(
                "{} vars for {} parameters",
                vars.len(),
                set.len()
            )));
        }
        Ok(Bound {
            vars,
            names: set.names().map(str::to_owned).collect(),
        })
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every tensor as a leaf; trainable leaves receive gradients.
    pub fn bind<E: Element>(&self, g: &mut Graph<E>, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                let t = t.cast::<E>();
                if trainable {
                    g.param(&t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound {
            vars,
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
        }
    }

    /// Adds the gradients of the bound leaves into the parameter buffers.
    /// Leaves the backward pass never reached contribute zeros.
    pub fn accumulate_grads<E: Element>(&mut self, g: &Graph<E>, bound: &Bound) {
        for ((_, t), v) in self.entries.iter_mut().zip(&bound.vars) {
            let grad: Vec<f32> = match g.grad(*v) {
                Some(grad) => grad.iter().map(|x| x.wide() as f32).collect(),
                None => vec![0.0; t.numel()],
            };
            t.accumulate_grad(&grad);
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }

    /// Replaces values from another set with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("{} tensors, expected {}", other.len(), self.len()),
            });
        }
        for ((name, t), (oname, o)) in self.entries.iter_mut().zip(&other.entries) {
            if name != oname || t.shape() != o.shape() {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("{oname} {:?} does not match {name} {:?}", o.shape(), t.shape()),
                });
            }
            *t = o.clone();
        }
        Ok(())
    }

    /// True when every tensor holds bit-identical values.
    pub fn bit_equal(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self.entries.iter().zip(&other.entries).all(|((n, a), (m, b))| {
                n == m
                    && a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// He-uniform weights: `U(-√(6/fan_in), √(6/fan_in))`.
pub(crate) fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
}
