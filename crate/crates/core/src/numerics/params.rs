use crate::error::{MvarError, Result};
use crate::numerics::matrix::DenseMatrix;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors. Iteration order is
/// insertion order, which keeps every consumer deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: DenseMatrix) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(MvarError::invalid(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| MvarError::invalid(format!("missing parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&DenseMatrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(DenseMatrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseMatrix)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Zero tensors with the same shapes, used as gradient buffers.
    pub fn zeros_like(&self) -> Vec<DenseMatrix> {
        self.tensors
            .iter()
            .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }
}
