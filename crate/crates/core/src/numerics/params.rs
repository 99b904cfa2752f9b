use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named parameter tensor with its Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Ordered, named parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_named(named: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        let params = named
            .into_iter()
            .map(|(name, value)| Param {
                name,
                m: value.zeros_like(),
                v: value.zeros_like(),
                value,
            })
            .collect();
        Self { params, step: 0 }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.push(Param {
            name: name.into(),
            m: value.zeros_like(),
            v: value.zeros_like(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.value)
    }

    /// Check that `grads` lines up with this set entry by entry.
    pub fn check_compatible(&self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::usage(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::Shape {
                    expected: p.value.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}
