use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

pub const TENSOR_FORMAT: &str = "deepseed-tensors/v1";

/// Handle to a tensor held by a [`Parameters`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered store of named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn total_numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn to_file(&self) -> TensorFile {
        TensorFile {
            format: TENSOR_FORMAT.to_string(),
            tensors: self
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrite values from a tensor file. Every parameter must be present
    /// with a matching shape; extra entries are rejected too.
    pub fn load_file(&mut self, file: &TensorFile) -> Result<(), TensorError> {
        if file.format != TENSOR_FORMAT {
            return Err(TensorError::Format(format!(
                "unsupported format tag `{}`",
                file.format
            )));
        }
        if file.tensors.len() != self.len() {
            return Err(TensorError::Format(format!(
                "expected {} tensors, found {}",
                self.len(),
                file.tensors.len()
            )));
        }
        for entry in &file.tensors {
            let id = self
                .find(&entry.name)
                .ok_or_else(|| TensorError::UnknownParameter(entry.name.clone()))?;
            let target = self.get_mut(id);
            if target.shape() != entry.shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "load",
                    detail: format!(
                        "`{}` has shape {:?}, file has {:?}",
                        entry.name,
                        target.shape(),
                        entry.shape
                    ),
                });
            }
            *target = Tensor::new(entry.shape.clone(), entry.data.clone())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized form of a parameter store: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub tensors: Vec<NamedTensor>,
}
