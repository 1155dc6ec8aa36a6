use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    /// Inserts a `rows×cols` tensor drawn from the Xavier-uniform
    /// distribution `U(-b, b)`, `b = sqrt(6 / (rows + cols))`.
    pub fn xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) {
        let b = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-b..=b)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("shape"));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Mismatch(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }

    /// Fails unless `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        for (name, m) in &self.tensors {
            match other.get(name) {
                None => return Err(Error::Mismatch(format!("parameter `{name}` missing"))),
                Some(o) if o.shape() != m.shape() => {
                    return Err(Error::Mismatch(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        o.shape(),
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = other.names().find(|n| !self.tensors.contains_key(*n)) {
            return Err(Error::Mismatch(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}
