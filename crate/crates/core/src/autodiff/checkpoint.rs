use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "treemil-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned map from parameter name to `(shape, row-major values)`.
///
/// Entries are kept in lexicographic name order, so serialization is
/// deterministic. `meta` carries whatever the owner needs to rebuild the
/// model around the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<CheckpointEntry>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new(serde_json::Value::Null)
    }
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta,
            params: Vec::new(),
        }
    }

    pub fn insert<T: Scalar>(&mut self, name: &str, value: &Tensor<T>) -> Result<()> {
        let entry = CheckpointEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            values: value.to_f64_vec(),
        };
        match self.params.binary_search_by(|e| e.name.as_str().cmp(name)) {
            Ok(_) => Err(Error::Checkpoint(format!("duplicate parameter {name}"))),
            Err(pos) => {
                self.params.insert(pos, entry);
                Ok(())
            }
        }
    }

    pub fn insert_store<T: Scalar>(&mut self, store: &ParamStore<T>) -> Result<()> {
        for (name, value) in store.iter_sorted() {
            self.insert(name, value)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.params
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.params[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|e| e.name.as_str())
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        Tensor::from_f64(&e.shape, &e.values)
    }

    /// Overwrites every parameter of `store` from the entry of the same name.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let t: Tensor<T> = self.tensor(store.name(id))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::dim("checkpoint restore", store.get(id).shape(), t.shape()));
            }
            *store.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        for w in ck.params.windows(2) {
            if w[0].name >= w[1].name {
                return Err(Error::Checkpoint("parameter names not in lexicographic order".into()));
            }
        }
        for e in &ck.params {
            if e.shape.iter().product::<usize>() != e.values.len() {
                return Err(Error::Checkpoint(format!("{}: shape does not match values", e.name)));
            }
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
