use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, RngStream, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<NamedTensor>", into = "Vec<NamedTensor>")]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl From<Vec<NamedTensor>> for ParamSet {
    fn from(entries: Vec<NamedTensor>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Self { entries, index }
    }
}

impl From<ParamSet> for Vec<NamedTensor> {
    fn from(p: ParamSet) -> Self {
        p.entries
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(NamedTensor { name, tensor });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.entries.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.entries
            .iter()
            .map(|e| NamedTensor { name: e.name.clone(), tensor: Tensor::zeros(e.tensor.shape()) })
            .collect::<Vec<_>>()
            .into()
    }

    /// True when both sets have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.tensor.axpy(alpha, &b.tensor);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            e.tensor.scale(alpha);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.tensor.data().iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.tensor.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::shape(format!("{} values for {} parameters", flat.len(), self.num_values())));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Checks names and shapes against a freshly initialised reference.
    pub fn check_layout(&self, reference: &Self, what: &str) -> Result<()> {
        if self.same_layout(reference) {
            Ok(())
        } else {
            Err(Error::validation(format!("{what} parameters do not match the configured architecture")))
        }
    }
}

/// Parameters of one [`ParamSet`] bound as leaves on a graph.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub fn new(g: &mut Graph<'a>, set: &'a ParamSet, requires_grad: bool) -> Self {
        let vars = set.entries.iter().map(|e| g.leaf_ref(&e.tensor, requires_grad)).collect();
        Self { set, vars }
    }

    /// Binds copies of the tensors, for graphs that cannot borrow `set`.
    pub fn copied(g: &mut Graph<'_>, set: &'a ParamSet, requires_grad: bool) -> Self {
        let vars = set
            .entries
            .iter()
            .map(|e| if requires_grad { g.input(e.tensor.clone()) } else { g.constant(e.tensor.clone()) })
            .collect();
        Self { set, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        match self.set.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn collect(&self, grads: &Gradients) -> ParamSet {
        self.set
            .entries
            .iter()
            .zip(&self.vars)
            .map(|(e, v)| NamedTensor { name: e.name.clone(), tensor: grads.wrt(*v) })
            .collect::<Vec<_>>()
            .into()
    }
}

/// Helper for initialising parameter sets.
pub(crate) struct Init<'r> {
    pub set: ParamSet,
    rng: &'r mut RngStream,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut RngStream) -> Self {
        Self { set: ParamSet::new(), rng }
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| std * self.rng.standard_normal()).collect();
        self.set.insert(name, Tensor::from_parts(shape.to_vec(), data));
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.set.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.set.insert(name, Tensor::filled(shape, 1.0));
    }

    /// Weight `[fan_in, fan_out]` scaled by `1/sqrt(fan_in)` plus zero bias.
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.normal(format!("{prefix}.w"), &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt());
        self.zeros(format!("{prefix}.b"), &[fan_out]);
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) {
        self.ones(format!("{prefix}.gain"), &[width]);
        self.zeros(format!("{prefix}.bias"), &[width]);
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
