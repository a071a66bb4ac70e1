//! Named parameter tensors and their graph bindings.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Parameter tensors keyed by dotted names such as `encoder.stage1.weight`.
/// Iteration order is the lexicographic order of the names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Names of the blocks under `prefix.`.
    pub fn block(&self, prefix: &str) -> Vec<&String> {
        let dotted = format!("{prefix}.");
        self.entries.keys().filter(|k| k.starts_with(&dotted)).collect()
    }

    /// Copy every entry of `other` into `self`, replacing same-named blocks.
    pub fn extend(&mut self, other: ParamSet) {
        self.entries.extend(other.entries);
    }

    /// Same names and shapes as `self`, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect(),
        }
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
    }

    /// Register every tensor as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.entries.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect(),
        }
    }

    /// Register every tensor as a constant leaf (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.entries.iter().map(|(k, v)| (k.clone(), g.constant(v.clone()))).collect(),
        }
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, Error> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients of every bound block, zero-filled where the loss does not reach.
    pub fn gradients(&self, g: &Graph, grads: &crate::graph::Gradients) -> ParamSet {
        ParamSet {
            entries: self
                .vars
                .iter()
                .map(|(k, v)| (k.to_string(), grads.get_or_zeros(*v, g.shape(*v))))
                .collect(),
        }
    }
}

/// Assemble a binding from explicit `(name, var)` pairs.
pub fn bound_from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Bound {
    Bound { vars: pairs.into_iter().collect() }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit))
}

/// Insert `{prefix}.weight` (`c_in×c_out`) and a zero `{prefix}.bias`.
pub fn init_linear<R: Rng + ?Sized>(set: &mut ParamSet, rng: &mut R, prefix: &str, c_in: usize, c_out: usize) {
    set.insert(format!("{prefix}.weight"), glorot_uniform(rng, &[c_in, c_out], c_in, c_out));
    set.insert(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
}
