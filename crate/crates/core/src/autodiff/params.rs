use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{AutodiffError, Matrix};

/// Named trainable matrices in a fixed registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, slot: usize) -> &Matrix {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.values[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Matrix, AutodiffError> {
        self.slot(name)
            .map(|s| &self.values[s])
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_owned()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, v)| CheckpointEntry {
                    name: name.clone(),
                    shape: [v.rows(), v.cols()],
                    values: v.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint. Every stored parameter must be
    /// present with a matching shape.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), AutodiffError> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let entry = ck
                .params
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {name}")))?;
            if entry.shape != [value.rows(), value.cols()]
                || entry.values.len() != value.len()
            {
                return Err(AutodiffError::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    entry.shape,
                    value.shape()
                )));
            }
            value.as_mut_slice().copy_from_slice(&entry.values);
        }
        Ok(())
    }
}

/// Flat serialized form of a [`ParamStore`], keyed by name and shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let json =
            serde_json::to_string(self).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }
}
