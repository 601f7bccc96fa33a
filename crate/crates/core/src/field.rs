use crate::error::{invalid, Result};

/// Coefficients of a finite element function over the free (unconstrained)
/// degrees of freedom of one space. Constrained DOFs are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    space_id: u64,
    values: Vec<f64>,
}

impl DiscreteField {
    pub(crate) fn new_unchecked(space_id: u64, values: Vec<f64>) -> Self {
        Self { space_id, values }
    }

    pub fn space_id(&self) -> u64 {
        self.space_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            space_id: self.space_id,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &DiscreteField) -> Result<Self> {
        if self.space_id != other.space_id {
            return Err(invalid("fields belong to different spaces"));
        }
        Ok(Self {
            space_id: self.space_id,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }
}
