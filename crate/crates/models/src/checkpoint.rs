//! Self-describing checkpoint container: named weight arrays in a
//! safetensors body plus a JSON header with the stage tag, configuration
//! snapshot, upstream checkpoint hashes and format version.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::init::SeededVarMap;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "stratavatar";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub stage: String,
    pub config: serde_json::Value,
    /// Upstream stage tag → hex SHA-256 of the checkpoint it was trained against.
    pub upstream: BTreeMap<String, String>,
    /// Stage-specific values (loss summaries, fixture metrics, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(stage: impl Into<String>, config: serde_json::Value) -> Self {
        Self { format_version: FORMAT_VERSION, stage: stage.into(), config, upstream: BTreeMap::new(), extra: serde_json::Value::Null }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_store(meta: CheckpointMeta, store: &SeededVarMap) -> Self {
        let tensors = store.sorted_vars().into_iter().map(|(k, v)| (k, v.as_tensor().clone())).collect();
        Self { meta, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&self.meta)?)]);
        safetensors::serialize(self.tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(info))
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (_, header) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let raw = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint("missing checkpoint header".into()))?;
        let meta: CheckpointMeta = serde_json::from_str(raw)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
        }
        let tensors = candle_core::safetensors::load_buffer(bytes, device)?.into_iter().collect();
        Ok(Self { meta, tensors })
    }

    /// Hex SHA-256 of the serialized container.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_bytes(&self.to_bytes()?))
    }

    /// Writes the file and returns its hash.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &bytes)?;
        Ok(hash_bytes(&bytes))
    }

    /// Reads a file, returning the checkpoint and its hash.
    pub fn read(path: &Path, device: &Device) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        Ok((Self::from_bytes(&bytes, device)?, hash_bytes(&bytes)))
    }

    pub fn var_builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        let map: HashMap<String, Tensor> = self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        VarBuilder::from_tensors(map, dtype, device)
    }

    pub fn config<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.config.clone())?)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
