use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{NetArchitecture, Network};
use super::NnError;

const FORMAT: &str = "ccheckers-net/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// JSON manifest describing a little-endian `f32` blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: NetArchitecture,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

impl Checkpoint {
    /// Manifest and blob bytes for `net`.
    pub fn encode(net: &Network<f32>, blob: &str, hyperparameters: serde_json::Value) -> (Checkpoint, Vec<u8>) {
        let params = net.params();
        let tensors = params
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone(), trainable: p.trainable })
            .collect();
        let mut bytes = Vec::with_capacity(params.iter().map(|p| p.len() * 4).sum());
        for p in &params {
            for v in &p.value {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Checkpoint {
            format: FORMAT.to_string(),
            architecture: net.architecture().clone(),
            blob: blob.to_string(),
            tensors,
            hyperparameters,
        };
        (manifest, bytes)
    }

    /// Rebuilds the network, validating every tensor against the architecture.
    pub fn decode(&self, blob: &[u8]) -> Result<Network<f32>, NnError> {
        if self.format != FORMAT {
            return Err(NnError::Corrupt(format!("unknown format {:?}", self.format)));
        }
        let mut net = Network::<f32>::new(&self.architecture, 0);
        let mut params = net.params_mut();
        if params.len() != self.tensors.len() {
            return Err(NnError::Corrupt(format!(
                "manifest lists {} tensors, architecture has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        let expected: usize = params.iter().map(|p| p.len() * 4).sum();
        if blob.len() != expected {
            return Err(NnError::Corrupt(format!("blob is {} bytes, expected {expected}", blob.len())));
        }
        let mut offset = 0;
        for (p, entry) in params.iter_mut().zip(&self.tensors) {
            if p.name != entry.name || p.shape != entry.shape || p.trainable != entry.trainable {
                return Err(NnError::Corrupt(format!(
                    "tensor {} {:?} does not match architecture tensor {} {:?}",
                    entry.name, entry.shape, p.name, p.shape
                )));
            }
            for v in p.value.iter_mut() {
                *v = f32::from_le_bytes(blob[offset..offset + 4].try_into().unwrap());
                offset += 4;
            }
        }
        drop(params);
        if !net.is_finite() {
            return Err(NnError::Corrupt("non-finite weights".into()));
        }
        Ok(net)
    }
}

fn blob_path(manifest: &Path, blob: &str) -> PathBuf {
    manifest.parent().map(|d| d.join(blob)).unwrap_or_else(|| PathBuf::from(blob))
}

/// Writes `<path>` (manifest) and `<path stem>.bin` (weights).
pub fn save_checkpoint(net: &Network<f32>, path: &Path, hyperparameters: serde_json::Value) -> Result<(), NnError> {
    let blob = path.with_extension("bin");
    let blob_name = blob.file_name().and_then(|n| n.to_str()).unwrap_or("weights.bin").to_string();
    let (manifest, bytes) = Checkpoint::encode(net, &blob_name, hyperparameters);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(blob_path(path, &blob_name), bytes)?;
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>, NnError> {
    let manifest: Checkpoint =
        serde_json::from_slice(&fs::read(path)?).map_err(|e| NnError::Corrupt(format!("manifest: {e}")))?;
    let blob = fs::read(blob_path(path, &manifest.blob))?;
    manifest.decode(&blob)
}
