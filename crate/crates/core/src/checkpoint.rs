//! Checkpoints: a JSON header next to a sidecar of little-endian `f64`
//! arrays (row-major, in [`ModelParams::arrays`] order).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::ClassSet;
use crate::model::{Activation, Dims, Hyperparams, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: Dims,
    pub activation: Activation,
    pub classes: ClassSet,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub hyper: Hyperparams,
    /// File name of the array sidecar, relative to the header.
    pub arrays: String,
}

/// Everything needed to score new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub classes: ClassSet,
    pub hyper: Hyperparams,
}

pub fn sidecar_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Checkpoint {
    pub fn header(&self, sidecar: &str) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            dims: self.params.dims,
            activation: self.params.activation,
            classes: self.classes.clone(),
            vocab_hash: self.vocab.content_hash(),
            vocab: self.vocab.tokens().to_vec(),
            hyper: self.hyper.clone(),
            arrays: sidecar.to_string(),
        }
    }

    pub fn array_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.params.num_params() * 8);
        for array in self.params.arrays() {
            for v in array {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Writes `path` (JSON header) and its `.bin` sidecar. The sidecar lands
    /// first so a visible header always has its arrays.
    pub fn save(&self, path: &Path) -> Result<()> {
        let sidecar = sidecar_path(path);
        let name = sidecar
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Checkpoint("bad checkpoint path".into()))?
            .to_string();
        write_atomic(&sidecar, &self.array_bytes())?;
        let header = serde_json::to_vec_pretty(&self.header(&name))?;
        write_atomic(path, &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_slice(&fs::read(path)?)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let vocab = Vocabulary::from_tokens(header.vocab.clone())?;
        if vocab.content_hash() != header.vocab_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        if vocab.len() != header.dims.vocab {
            return Err(Error::Checkpoint("vocabulary size disagrees with dims".into()));
        }
        let sidecar = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.arrays);
        let bytes = fs::read(sidecar)?;
        let mut params = ModelParams::zeros(header.dims, header.activation);
        let expected = params.num_params() * 8;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "array file has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for array in params.arrays_mut() {
            for v in array.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        Ok(Checkpoint {
            params,
            vocab,
            classes: header.classes,
            hyper: header.hyper,
        })
    }
}
