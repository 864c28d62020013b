use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    #[serde(skip)]
    pub momentum: Option<Tensor>,
}

/// Named parameters with their gradients and momentum buffers.
///
/// Iteration order is lexicographic by name, which keeps every pass over the
/// store deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(
            name,
            Param {
                value,
                grad: None,
                momentum: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if grad.shape() != p.value.shape() {
            return Err(Error::dim(
                "set_grad",
                format!("{name}: {:?} vs {:?}", grad.shape(), p.value.shape()),
            ));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Binds a parameter into `graph` under `namespace + name`.
    pub fn bind(&self, graph: &mut Graph, namespace: &str, name: &str) -> Result<super::graph::Var> {
        let value = self.get(name)?;
        graph.param(&format!("{namespace}{name}"), value)
    }

    /// Copies gradients of every parameter bound under `namespace` out of a
    /// finished backward pass. Parameters the output did not depend on get
    /// zero gradients.
    pub fn absorb_grads(&mut self, graph: &Graph, grads: &Gradients, namespace: &str) {
        for (name, p) in self.params.iter_mut() {
            let Some(var) = graph.param_var(&format!("{namespace}{name}")) else {
                continue;
            };
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            p.grad = Some(g);
        }
    }

    /// Store holding only the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites values of parameters present in `other`.
    pub fn update_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &other.params {
            *self.get_mut(name)? = p.value.clone();
        }
        Ok(())
    }

    /// Bitwise equality of values (gradients and buffers ignored).
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((a, pa), (b, pb))| {
                a == b
                    && pa.value.shape() == pb.value.shape()
                    && pa
                        .value
                        .values()
                        .iter()
                        .zip(pb.value.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
