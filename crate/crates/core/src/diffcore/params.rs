use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DiffError;

/// A named trainable (or frozen) tensor. Values are always stored in double
/// precision; tapes running in `f32` convert on registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, DiffError> {
        let name = name.into();
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != values.len() {
            return Err(DiffError::Shape {
                op: "param",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite {
                op: "param",
                detail: name,
            });
        }
        Ok(Self {
            name,
            shape,
            values,
            requires_grad: true,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            requires_grad: true,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.requires_grad = false;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parameter group, i.e. the leading dotted segment of the name
    /// (`encoder.conv1.weight` belongs to `encoder`).
    pub fn group(&self) -> &str {
        param_group(&self.name)
    }
}

pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Ordered collection of parameters, addressable by index or name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: ParamTensor) -> Result<usize, DiffError> {
        if self.index_of(&tensor.name).is_some() {
            return Err(DiffError::Contract(format!(
                "duplicate parameter name `{}`",
                tensor.name
            )));
        }
        self.tensors.push(tensor);
        Ok(self.tensors.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

/// Gradient of a scalar loss with respect to each parameter, keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap {
    entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn insert(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) {
        match self.entries.get_mut(&name) {
            Some((_, acc)) => acc.iter_mut().zip(&values).for_each(|(a, v)| *a += v),
            None => {
                self.entries.insert(name, (shape, values));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(|(_, v)| v.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.entries.get_mut(name).map(|(_, v)| v)
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(|(s, _)| s.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, (_, v))| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute gradient entry among parameters of the given group.
    pub fn max_abs_in_group(&self, group: &str) -> f64 {
        self.entries
            .iter()
            .filter(|(k, _)| param_group(k) == group)
            .flat_map(|(_, (_, v))| v.iter())
            .fold(0.0, |m, &x| m.max(x.abs()))
    }
}
