use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{MsrNet, NetworkConfig, Task};
use crate::tensor::{read_tensors, write_tensors, ParamGroup};

const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 4],
}

/// JSON side of a checkpoint; the parameters live in the blob file it names,
/// one tensor per entry in the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub task: Task,
    pub iteration: usize,
    pub validation_loss: f64,
    pub network: NetworkConfig,
    pub params: Vec<ParamEntry>,
    pub blob: String,
}

impl CheckpointManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: CheckpointManifest = serde_json::from_str(text)?;
        if m.format != FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format {}", m.format)));
        }
        if !m.validation_loss.is_finite() {
            return Err(Error::Parse("checkpoint validation loss is not finite".into()));
        }
        m.network.validate()?;
        Ok(m)
    }
}

/// A model snapshot with the iteration it was taken at and its validation loss.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MsrNet<f32>,
    pub iteration: usize,
    pub validation_loss: f64,
}

impl Checkpoint {
    pub fn manifest(&self, blob: impl Into<String>) -> CheckpointManifest {
        CheckpointManifest {
            format: FORMAT,
            task: self.model.task(),
            iteration: self.iteration,
            validation_loss: self.validation_loss,
            network: self.model.config().clone(),
            params: self
                .model
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.value.shape().dims(),
                })
                .collect(),
            blob: blob.into(),
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let values: Vec<_> = self.model.params().iter().map(|p| &p.value).collect();
        let mut out = Vec::new();
        write_tensors(&mut out, &values).expect("writing to memory");
        out
    }

    /// Rebuilds a checkpoint from its manifest and blob bytes. The sizes are
    /// checked against the manifest before any network is allocated.
    pub fn from_parts(manifest: &CheckpointManifest, blob: &[u8]) -> Result<Self> {
        let declared: u128 = manifest
            .params
            .iter()
            .map(|p| p.shape.iter().fold(1u128, |a, &d| a.saturating_mul(d as u128)))
            .fold(0u128, |a, n| a.saturating_add(n));
        let expected = manifest.network.parameter_count();
        let bytes = (manifest.params.len() as u128) * 32 + expected * 4;
        if declared != expected || bytes != blob.len() as u128 {
            return Err(Error::Data(format!(
                "checkpoint declares {declared} parameters in {} bytes; the network needs {expected} ({bytes} bytes)",
                blob.len()
            )));
        }
        let tensors = read_tensors(blob)?;
        let mut model = MsrNet::new(manifest.network.clone(), manifest.task, 0)?;
        if tensors.len() != model.params().len() || manifest.params.len() != tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, the network has {}",
                tensors.len(),
                model.params().len()
            )));
        }
        for ((p, entry), t) in model.params_mut().iter_mut().zip(&manifest.params).zip(tensors) {
            if p.name != entry.name || p.value.shape() != t.shape() || t.shape().dims() != entry.shape {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} ({}) does not match network parameter {} ({})",
                    entry.name,
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Data(format!("checkpoint parameter {} is not finite", entry.name)));
            }
            p.value = t;
        }
        Ok(Checkpoint {
            model,
            iteration: manifest.iteration,
            validation_loss: manifest.validation_loss,
        })
    }

    /// Writes `{stem}.json` and `{stem}.bin` into `dir`; returns the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob_name = format!("{stem}.bin");
        let blob_path = dir.join(&blob_name);
        std::fs::write(&blob_path, self.blob()).map_err(|e| Error::io(&blob_path, e))?;
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.manifest(blob_name))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a checkpoint from its manifest path; the blob is resolved
    /// relative to the manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = CheckpointManifest::parse(&text)?;
        let blob_path = path.parent().unwrap_or(Path::new("")).join(&manifest.blob);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Checkpoint::from_parts(&manifest, &blob)
    }
}
