//! Versioned checkpoint archives: every network's parameters and buffers,
//! optimizer moments and RNG streams in one safetensors file, with a JSON
//! header stored in the file metadata.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, View};
use serde::{Deserialize, Serialize};

use super::{RngStreams, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_KEY: &str = "coevo_header";


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Number of completed cycles.
    pub cycle_index: usize,
    pub image_size: usize,
    pub config: TrainConfig,
    pub rngs: RngStreams,
    /// Step count of the reconstruction network's optimizer. The
    /// domain-adaptation optimizers restart with their networks every cycle,
    /// so their moments are not stored.
    pub recon_optimizer_steps: u64,
    pub da_steps: u64,
    pub recon_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Flat tensors keyed `<group>/<name>`.
    pub tensors: BTreeMap<String, Vec<f32>>,
}

impl Checkpoint {
    pub fn insert_group(&mut self, group: &str, items: Vec<(String, Vec<f32>)>) {
        for (name, v) in items {
            self.tensors.insert(format!("{group}/{name}"), v);
        }
    }

    /// Every tensor of `group`, with the group prefix removed.
    pub fn group(&self, group: &str) -> Vec<(String, Vec<f32>)> {
        let prefix = format!("{group}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v.clone())))
            .collect()
    }

    fn views(&self) -> Vec<(&str, F32View<'_>)> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.as_str(), F32View { data: v, shape: [v.len()] }))
            .collect()
    }

    fn metadata(&self) -> Result<HashMap<String, String>> {
        Ok(HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(&self.header)?)]))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        safetensors::serialize(self.views(), Some(self.metadata()?)).map_err(st_error)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(st_error)?;
        let header_json = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| Error::Checkpoint("missing checkpoint header".into()))?;
        let version: serde_json::Value = serde_json::from_str(header_json)?;
        let found = version.get("format_version").and_then(|v| v.as_u64());
        if found != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Checkpoint(format!(
                "incompatible checkpoint version {found:?} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header: CheckpointHeader = serde_json::from_str(header_json)?;
        let st = SafeTensors::deserialize(bytes).map_err(st_error)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor '{name}' is not f32")));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, data);
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes to a temporary sibling first so an interrupted write never
    /// replaces a good checkpoint with a truncated one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        safetensors::serialize_to_file(self.views(), Some(self.metadata()?), &tmp).map_err(|e| match e {
            safetensors::SafeTensorError::IoError(io) => Error::io(&tmp, io),
            other => st_error(other),
        })?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn st_error(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Serializes one flat tensor without an intermediate byte copy of the
/// whole archive.
struct F32View<'a> {
    data: &'a [f32],
    shape: [usize; 1],
}

impl View for F32View<'_> {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Owned(self.data.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    fn data_len(&self) -> usize {
        self.data.len() * 4
    }
}
