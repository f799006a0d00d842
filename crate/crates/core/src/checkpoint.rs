//! Versioned binary checkpoint blobs with an embedded JSON manifest.
//!
//! Layout: magic `MMCK`, u32 format version, u64 manifest length, manifest
//! JSON (UTF-8), then each tensor as (u32 name length, name bytes, u64 rows,
//! u64 cols, rows·cols little-endian f64). Tensors are written in sorted name
//! order, so identical state always produces identical bytes.

use crate::mat::Mat;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MMCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("unsupported checkpoint format version {got} (supported: {supported})")]
    BadVersion { got: u32, supported: u32 },
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("checkpoint is truncated or corrupt")]
    Truncated,
    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("missing tensor '{0}' in checkpoint")]
    MissingTensor(String),
}

/// What produced the checkpoint and under which configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Producer kind: retrieval | alignment | summarizer.
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub tokenizer_rule: String,
    pub code_version: String,
    /// Producer-specific dimensions and settings, ordered for stable bytes.
    pub dims: BTreeMap<String, String>,
    /// Optional extra payload (e.g. the summarizer vocabulary).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab: Vec<String>,
}

impl Manifest {
    pub fn new(kind: &str, seed: u64, config_hash: &str) -> Self {
        Manifest {
            kind: kind.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            tokenizer_rule: crate::text::TOKENIZER_RULE_ID.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            dims: BTreeMap::new(),
            vocab: Vec::new(),
        }
    }

    pub fn with_dim(mut self, key: &str, value: impl ToString) -> Self {
        self.dims.insert(key.to_string(), value.to_string());
        self
    }
}

/// A named-tensor checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Mat>,
}

impl Checkpoint {
    pub fn new(manifest: Manifest) -> Self {
        Checkpoint { manifest, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Mat) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat, CheckpointError> {
        self.tensors.get(name).ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut file = File::create(path).map_err(io_err)?;
        let manifest =
            serde_json::to_vec(&self.manifest).expect("manifest serialization cannot fail");
        file.write_all(MAGIC).map_err(io_err)?;
        file.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        file.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(io_err)?;
        file.write_all(&manifest).map_err(io_err)?;
        for (name, tensor) in &self.tensors {
            file.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
            file.write_all(name.as_bytes()).map_err(io_err)?;
            file.write_all(&(tensor.rows() as u64).to_le_bytes()).map_err(io_err)?;
            file.write_all(&(tensor.cols() as u64).to_le_bytes()).map_err(io_err)?;
            for v in tensor.data() {
                file.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *cursor + n > bytes.len() {
                return Err(CheckpointError::Truncated);
            }
            let out = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(out)
        };
        if take(&mut cursor, 4)? != MAGIC {
            return Err(CheckpointError::BadMagic { path: path.display().to_string() });
        }
        let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion { got: version, supported: FORMAT_VERSION });
        }
        let manifest_len = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let manifest: Manifest = serde_json::from_slice(take(&mut cursor, manifest_len)?)
            .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        while cursor < bytes.len() {
            let name_len =
                u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
                .map_err(|e| CheckpointError::BadManifest(e.to_string()))?;
            let rows = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
            let raw = take(&mut cursor, rows * cols * 8)?;
            let data: Vec<f64> =
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.insert(name, Mat::from_vec(rows, cols, data));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    /// Guards a consumer against loading the wrong producer's blob.
    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.manifest.kind != kind {
            return Err(CheckpointError::KindMismatch {
                expected: kind.to_string(),
                found: self.manifest.kind.clone(),
            });
        }
        Ok(())
    }
}
