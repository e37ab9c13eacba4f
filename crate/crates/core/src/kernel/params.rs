use crate::error::{Error, Result};
use crate::kernel::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter buffer plus an ordered registry of named tensor slices.
/// This is the unit exchanged between clients and the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    registry: Vec<Slot>,
}

impl ParamVector {
    pub fn new() -> Self {
        ParamVector {
            data: Vec::new(),
            registry: Vec::new(),
        }
    }

    /// Appends a named tensor. Names must be unique.
    pub fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::Kernel(format!(
                "tensor `{name}` has {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.registry.iter().any(|s| s.name == name) {
            return Err(Error::Kernel(format!("duplicate tensor name `{name}`")));
        }
        self.registry.push(Slot {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        self.push(name, &[m.rows(), m.cols()], m.as_slice())
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            data: vec![0.0; self.data.len()],
            registry: self.registry.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn registry(&self) -> &[Slot] {
        &self.registry
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.registry == other.registry
    }

    fn slot(&self, name: &str) -> Result<&Slot> {
        self.registry
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Kernel(format!("no tensor named `{name}`")))
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        let range = self.slot(name)?.range();
        Ok(&self.data[range])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.slot(name)?.range();
        Ok(&mut self.data[range])
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let slot = self.slot(name)?;
        let (r, c) = match slot.shape[..] {
            [r, c] => (r, c),
            [c] => (1, c),
            _ => {
                return Err(Error::Kernel(format!(
                    "tensor `{name}` with shape {:?} is not a matrix",
                    slot.shape
                )))
            }
        };
        Matrix::from_vec(r, c, self.data[slot.range()].to_vec())
    }

    /// Copies `values` into the named slice.
    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let dst = self.slice_mut(name)?;
        if dst.len() != values.len() {
            return Err(Error::Kernel(format!(
                "tensor `{name}` expects {} values, got {}",
                dst.len(),
                values.len()
            )));
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    /// Name of the slice that owns flat index `i`.
    pub fn slice_name_at(&self, i: usize) -> Option<&str> {
        self.registry
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| s.name.as_str())
    }

    /// Splits into `(name, shape, values)` tensors in registry order.
    pub fn unflatten(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.registry
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone(), self.data[s.range()].to_vec()))
            .collect()
    }

    pub fn flatten(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut p = ParamVector::new();
        for (name, shape, values) in tensors {
            p.push(name, shape, values)?;
        }
        Ok(p)
    }
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::new()
    }
}
