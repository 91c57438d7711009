//! Checkpoint container: an 8-byte magic, the manifest length as a
//! little-endian `u64`, a JSON manifest, then every tensor's data as
//! little-endian `f64` values. Tensor offsets are relative to the start of
//! the blob section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusOptions, LabelSpace, Vocabulary};
use crate::emograph::EmotionGraph;
use crate::numcore::Tensor;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::{Classifier, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMOGRPH\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    corpus: CorpusOptions,
    labels: LabelSpace,
    vocab: Vocabulary,
    graph: EmotionGraph,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Just enough of the manifest to report its version when the rest fails.
#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

fn format_error(version: Option<u32>, message: impl Into<String>) -> ModelError {
    ModelError::Format { version, message: message.into() }
}

impl Classifier {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut blob = Vec::with_capacity(self.params.numel() * 8);
        let mut tensors = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.insert(
                name.clone(),
                TensorEntry { shape: t.shape().to_vec(), offset, length: blob.len() as u64 - offset },
            );
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            corpus: self.corpus.clone(),
            labels: self.labels.clone(),
            vocab: self.vocab.clone(),
            graph: self.graph.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| format_error(Some(CHECKPOINT_VERSION), e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(format_error(None, "not an emograph checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_error(None, "truncated manifest"))?;
        let json = &bytes[16..end];
        let version = serde_json::from_slice::<VersionOnly>(json).ok().map(|v| v.version);
        if version != Some(CHECKPOINT_VERSION) {
            return Err(format_error(version, format!("supported version is {CHECKPOINT_VERSION}")));
        }
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| format_error(version, e.to_string()))?;
        let blob = &bytes[end..];
        let mut tensors = BTreeMap::new();
        for (name, entry) in manifest.tensors {
            let numel: usize = entry.shape.iter().product();
            let start = usize::try_from(entry.offset).map_err(|_| format_error(version, "offset overflow"))?;
            let stop = start
                .checked_add(numel * 8)
                .filter(|&s| s <= blob.len() && entry.length == (numel * 8) as u64)
                .ok_or_else(|| format_error(version, format!("tensor {name} is out of bounds")))?;
            let data = blob[start..stop]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| format_error(version, format!("tensor {name}: {e}")))?;
            tensors.insert(name, t);
        }
        let model = Classifier {
            config: manifest.config,
            labels: manifest.labels,
            vocab: manifest.vocab,
            graph: manifest.graph,
            corpus: manifest.corpus,
            params: ModelParams::from_map(tensors),
        };
        model.validate().map_err(|e| format_error(version, e.to_string()))?;
        if !model.params.is_finite() {
            return Err(format_error(version, "non-finite parameter values"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let io = |source| ModelError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}
