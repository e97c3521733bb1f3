use std::collections::HashMap;

use super::graph::Graph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named parameter tensor with its Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
    pub(crate) first_moment: Tensor,
    pub(crate) second_moment: Tensor,
    pub(crate) step: u64,
}

impl Param {
    fn new(value: Tensor, trainable: bool) -> Self {
        let first_moment = Tensor::zeros(value.shape());
        let second_moment = Tensor::zeros(value.shape());
        Self { value, trainable, first_moment, second_moment, step: 0 }
    }

    /// Number of optimizer steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// An ordered collection of named parameters belonging to one network
/// family (the encoder, the utility decoder, a discriminator, ...).
///
/// The `tag` identifies the set inside a [`Graph`]: a graph only produces
/// gradients for sets it was told to track.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tag: String,
    params: Vec<(String, Param)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), params: Vec::new(), index: HashMap::new() }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Inserts or replaces a parameter. Replacing resets its optimizer state.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        let param = Param::new(value, trainable);
        match self.index.get(&name) {
            Some(&i) => self.params[i].1 = param,
            None => {
                self.index.insert(name.clone(), self.params.len());
                self.params.push((name, param));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Usage(format!("parameter `{name}` missing from set `{}`", self.tag)))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i].1.value),
            None => Err(Error::Usage(format!("parameter `{name}` missing from set `{}`", self.tag))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, p) in &mut self.params {
            if name.starts_with(prefix) {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// True when every parameter value is bit-identical to `other`'s.
    pub fn values_identical(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((na, a), (nb, b))| {
                na == nb
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Folds batch-norm statistics recorded by a training-mode forward pass
    /// into the running buffers of this set.
    pub fn commit_running_stats(&mut self, graph: &Graph) -> Result<()> {
        let tag = self.tag.clone();
        for update in graph.stat_updates().iter().filter(|u| u.set == tag) {
            let m = update.momentum;
            let mean = self.value_mut(&update.mean_name)?;
            for (r, b) in mean.data_mut().iter_mut().zip(&update.batch_mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            let var = self.value_mut(&update.var_name)?;
            for (r, b) in var.data_mut().iter_mut().zip(&update.batch_var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
        Ok(())
    }
}

/// Gradients for one [`ParamSet`], aligned with its trainable parameters.
#[derive(Clone, Debug)]
pub struct GradMap {
    pub(crate) grads: Vec<(String, Tensor)>,
}

impl GradMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
