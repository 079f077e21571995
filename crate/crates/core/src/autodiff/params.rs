use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform `[rows, cols]` matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
        self.add(name, Tensor::new(vec![rows, cols], data).expect("glorot shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces every value from `other`, which must have identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    b.shape(),
                    a.shape()
                )));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}
