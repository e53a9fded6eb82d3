//! Named-array checkpoints stored as JSON.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save/load is bitwise exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkern::param::Param;

pub const CHECKPOINT_FORMAT: &str = "trajstyle-params-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Architecture description needed to rebuild the model.
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: &[f64]) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: data.to_vec(),
        });
    }

    pub fn push_param(&mut self, p: &Param) {
        self.push(p.name.clone(), &p.shape, &p.value);
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Invalid(format!("checkpoint has no array '{name}'")))
    }

    /// Copy a stored array into `dst`, checking its length.
    pub fn read_into(&self, name: &str, dst: &mut [f64]) -> Result<()> {
        let a = self.get(name)?;
        if a.data.len() != dst.len() {
            return Err(Error::Shape(format!(
                "checkpoint array '{name}' has {} values, model expects {}",
                a.data.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&a.data);
        Ok(())
    }

    pub fn read_param(&self, p: &mut Param) -> Result<()> {
        let name = p.name.clone();
        self.read_into(&name, &mut p.value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unknown checkpoint format '{}'", self.format)));
        }
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Shape(format!("array '{}' shape {:?} does not match {} values", a.name, a.shape, a.data.len())));
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint array '{}'", a.name)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        ck.validate()?;
        Ok(ck)
    }
}
