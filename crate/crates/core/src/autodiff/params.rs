use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rvhm;

/// Ordered, named parameter arrays of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    dims: Vec<usize>,
    file: String,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Places every parameter on `g` as a trainable leaf, in store order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Places every parameter on `g` as a constant.
    pub fn bind_const(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect()
    }

    /// Gradients for `vars` (as returned by [`bind`](Self::bind)); zeros where none arrived.
    pub fn grads(&self, g: &Graph, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter()
            .zip(self.tensors())
            .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }

    /// Writes `manifest.json` plus one RVHM file per parameter. Values are stored as f32.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for (i, (name, t)) in self.entries.iter().enumerate() {
            let file = format!("p{i:03}.rvhm");
            let data: Vec<f32> = t.data.iter().map(|&v| v as f32).collect();
            rvhm::write_file(&dir.join(&file), name, &t.shape, &data)?;
            manifest.push(CheckpointEntry { name: name.clone(), dims: t.shape.clone(), file });
        }
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Vec<CheckpointEntry> = serde_json::from_slice(&text)?;
        let mut store = Self::new();
        for e in manifest {
            let (dims, data) = rvhm::read_file(&dir.join(&e.file), &e.name)?;
            if dims != e.dims {
                return Err(Error::Consistency(format!(
                    "parameter {}: manifest dims {:?} but payload dims {dims:?}",
                    e.name, e.dims
                )));
            }
            store.insert(e.name, Tensor::new(dims, data.into_iter().map(f64::from).collect())?);
        }
        Ok(store)
    }
}
