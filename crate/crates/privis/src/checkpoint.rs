//! Binary parameter checkpoints.
//!
//! Layout: magic `PVST`, `u32` LE format version, `u32` LE header length,
//! the UTF-8 JSON header, then every tensor as little-endian `f32` in
//! header order. Offsets in the header are byte offsets into the data
//! section.

use std::fs;
use std::path::Path;

use privis_core::classify::{ClsConfig, ClsModel};
use privis_core::params::ParamSet;
use privis_core::sr::{SrConfig, SrModel};
use privis_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"PVST";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Dcscn,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: Kind,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub config: serde_json::Value,
    pub params: ParamSet,
}

pub fn encode(kind: Kind, config: serde_json::Value, params: &ParamSet) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { kind, config, tensors }).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a PVST checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated checkpoint header".into()))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| bad(format!("checkpoint header: {e}")))?;
    let data = &bytes[12 + hlen..];
    let mut params = ParamSet::new();
    let mut expected = 0u64;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset != expected {
            return Err(bad(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset)));
        }
        let start = e.offset as usize;
        let raw = data
            .get(start..start + 4 * n)
            .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", e.name)))?;
        let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(e.name.clone(), Tensor::new(e.shape.clone(), vals)?);
        expected += 4 * n as u64;
    }
    if expected as usize != data.len() {
        return Err(bad(format!(
            "{} trailing bytes after the last tensor",
            data.len() - expected as usize
        )));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        params,
    })
}

pub fn write(path: &Path, kind: Kind, config: serde_json::Value, params: &ParamSet) -> Result<()> {
    fs::write(path, encode(kind, config, params)).at(path)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    decode(path, &bytes)
}

fn expect_kind(path: &Path, ck: &Checkpoint, kind: Kind) -> Result<()> {
    if ck.kind != kind {
        return Err(Error::format(path, format!("checkpoint holds {:?}, expected {kind:?}", ck.kind)));
    }
    Ok(())
}

pub fn save_sr(path: &Path, model: &SrModel) -> Result<()> {
    let config = serde_json::to_value(model.config()).expect("config serializes");
    write(path, Kind::Dcscn, config, model.params())
}

pub fn load_sr(path: &Path) -> Result<SrModel> {
    let ck = read(path)?;
    expect_kind(path, &ck, Kind::Dcscn)?;
    let config: SrConfig =
        serde_json::from_value(ck.config).map_err(|e| Error::format(path, format!("dcscn config: {e}")))?;
    Ok(SrModel::from_params(config, &ck.params)?)
}

/// Classifier checkpoints also record the input cell they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierMeta {
    pub model: ClsConfig,
    pub task: String,
    pub dim: usize,
    pub dcscn: bool,
}

pub fn save_cls(path: &Path, model: &ClsModel, meta: &ClassifierMeta) -> Result<()> {
    let config = serde_json::to_value(meta).expect("config serializes");
    write(path, Kind::Classifier, config, model.params())
}

pub fn load_cls(path: &Path) -> Result<(ClsModel, ClassifierMeta)> {
    let ck = read(path)?;
    expect_kind(path, &ck, Kind::Classifier)?;
    let meta: ClassifierMeta = serde_json::from_value(ck.config)
        .map_err(|e| Error::format(path, format!("classifier config: {e}")))?;
    let model = ClsModel::from_params(meta.model.clone(), &ck.params)?;
    Ok((model, meta))
}
