//! Named parameter collections.

use crate::error::{Error, Result};
use crate::numerics::rng::fnv1a64;
use crate::numerics::tensor::{Tensor1D, Tensor2D};
use std::collections::BTreeMap;

/// A tensor of either rank, as stored in a [`ParamSet`] or gradient map.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorValue {
    Vector(Tensor1D),
    Matrix(Tensor2D),
}

impl TensorValue {
    pub fn zeros_like(&self) -> TensorValue {
        match self {
            TensorValue::Vector(v) => TensorValue::Vector(Tensor1D::zeros(v.len())),
            TensorValue::Matrix(m) => TensorValue::Matrix(Tensor2D::zeros(m.rows(), m.cols())),
        }
    }

    pub fn same_shape(&self, other: &TensorValue) -> bool {
        match (self, other) {
            (TensorValue::Vector(a), TensorValue::Vector(b)) => a.len() == b.len(),
            (TensorValue::Matrix(a), TensorValue::Matrix(b)) => a.shape() == b.shape(),
            _ => false,
        }
    }

    pub fn elems(&self) -> &[f64] {
        match self {
            TensorValue::Vector(v) => v.as_slice(),
            TensorValue::Matrix(m) => m.as_slice(),
        }
    }

    pub fn elems_mut(&mut self) -> &mut [f64] {
        match self {
            TensorValue::Vector(v) => v.as_mut_slice(),
            TensorValue::Matrix(m) => m.as_mut_slice(),
        }
    }

    pub fn as_vector(&self) -> Option<&Tensor1D> {
        match self {
            TensorValue::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Tensor2D> {
        match self {
            TensorValue::Matrix(m) => Some(m),
            _ => None,
        }
    }
}

impl From<Tensor1D> for TensorValue {
    fn from(t: Tensor1D) -> Self {
        TensorValue::Vector(t)
    }
}

impl From<Tensor2D> for TensorValue {
    fn from(t: Tensor2D) -> Self {
        TensorValue::Matrix(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: TensorValue,
    pub trainable: bool,
}

/// Named collection of tensors with per-parameter trainable flags.
///
/// Iteration order is the lexicographic name order, which makes optimizer
/// sweeps and content fingerprints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: impl Into<TensorValue>,
        trainable: bool,
    ) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.params.insert(
            name,
            Param {
                value: value.into(),
                trainable,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn vector(&self, name: &str) -> Result<&Tensor1D> {
        self.get(name)
            .and_then(|p| p.value.as_vector())
            .ok_or_else(|| Error::contract(format!("missing vector parameter {name}")))
    }

    pub fn matrix(&self, name: &str) -> Result<&Tensor2D> {
        self.get(name)
            .and_then(|p| p.value.as_matrix())
            .ok_or_else(|| Error::contract(format!("missing matrix parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// FNV-1a over names, shapes, flags, and raw element bytes. Used for
    /// encoder fingerprints and mutation checks in tests.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, param) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(param.trainable as u8);
            match &param.value {
                TensorValue::Vector(v) => {
                    bytes.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v.as_slice() {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorValue::Matrix(m) => {
                    bytes.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                    bytes.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                    for x in m.as_slice() {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        fnv1a64(&bytes)
    }
}
