use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Tensor};
use crate::error::{Result, SeaError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named dense parameters in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            tape,
            tensors: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant, for forward-only passes.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            tape,
            tensors: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    pub fn to_records(&self) -> BTreeMap<String, TensorRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), TensorRecord::from_array(v)))
            .collect()
    }

    /// Overwrites every parameter from `records`; names and shapes must match
    /// exactly.
    pub fn load_records(&mut self, records: &BTreeMap<String, TensorRecord>) -> Result<()> {
        if records.len() != self.len() {
            return Err(SeaError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                records.len()
            )));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let rec = records
                .get(name)
                .ok_or_else(|| SeaError::Checkpoint(format!("missing tensor {name}")))?;
            let arr = rec.to_array()?;
            if arr.dim() != value.dim() {
                return Err(SeaError::Checkpoint(format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    arr.dim(),
                    value.dim()
                )));
            }
            *value = arr;
        }
        Ok(())
    }
}

/// Parameters registered on one tape.
pub struct BoundParams<'t> {
    tape: &'t Tape,
    tensors: Vec<Tensor<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> Tensor<'t> {
        self.tensors[id.0]
    }

    /// Gradients aligned with the store's parameter order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|&t| grads.get(t)).collect()
    }
}

/// Serialized tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorRecord {
    pub fn from_array(a: &Array2<f64>) -> Self {
        TensorRecord {
            shape: a.shape().to_vec(),
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        match self.shape.as_slice() {
            &[r, c] => Array2::from_shape_vec((r, c), self.values.clone())
                .map_err(|e| SeaError::Checkpoint(e.to_string())),
            other => Err(SeaError::Checkpoint(format!("expected 2-d shape, got {other:?}"))),
        }
    }
}
