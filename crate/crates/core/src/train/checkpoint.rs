//! Checkpoint container.
//!
//! Layout (little endian): `u32` entry count; per entry a `u16` name length,
//! the UTF-8 name and an embedded HXT1 tensor; then a `u32` length and a JSON
//! metadata block.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::EpochMetrics;
use super::TrainConfig;
use crate::data::hxt::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub adam_step: u64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: CheckpointMeta,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::DuplicateName(n.to_string()));
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_unique(self.tensors.iter().map(|(n, _)| n.as_str()))?;
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
        let mut out = Vec::new();
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t)?;
        }
        let json = serde_json::to_vec(&self.meta)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Format("metadata too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let count = read_u32(&mut r, "entry count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len).or_else(|_| format_err(format!("truncated name length of entry {i}")))?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name).or_else(|_| format_err(format!("truncated name of entry {i}")))?;
            let name = String::from_utf8(name).or_else(|_| format_err(format!("entry {i} name is not UTF-8")))?;
            let t = read_tensor(&mut r)?.into_f32()?;
            tensors.push((name, t));
        }
        check_unique(tensors.iter().map(|(n, _)| n.as_str()))?;
        let len = read_u32(&mut r, "metadata length")? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).or_else(|_| format_err("truncated metadata"))?;
        if (r.position() as usize) != bytes.len() {
            return format_err("trailing bytes after metadata");
        }
        let version: serde_json::Value = serde_json::from_slice(&json)?;
        match version.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return format_err(format!("checkpoint version {v}, expected {CHECKPOINT_VERSION}")),
            None => return format_err("metadata lacks format_version"),
        }
        let meta = serde_json::from_value(version)?;
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_u32(r: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).or_else(|_| format_err(format!("truncated {what}")))?;
    Ok(u32::from_le_bytes(b))
}
