//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `MAGECKPT`, little-endian `u32` format version,
//! little-endian `u64` header length, a JSON header, then every tensor listed
//! in the header as row-major little-endian `f64`, in header order. Raw bit
//! patterns are stored, so a save/load cycle is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::freeze::FreezeMask;
use crate::model::tensors::{TensorMap, TensorName};
use crate::model::toy::{ModelConfig, ToyModel};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"MAGECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Task trained in the stage that produced this checkpoint.
    pub task_id: String,
    /// Zero-based stage index.
    pub stage: usize,
}

/// Model weights, the active freeze mask (inside the model), and optional
/// EMA shadow weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: ToyModel,
    pub ema: Option<TensorMap>,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Section {
    Model,
    Ema,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    section: Section,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    mask: FreezeMask,
    meta: CheckpointMeta,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.parameters();
        let mut entries = Vec::new();
        let mut payload: Vec<&Matrix> = Vec::new();
        let sections = std::iter::once((Section::Model, &params))
            .chain(self.ema.as_ref().map(|e| (Section::Ema, e)));
        for (section, map) in sections {
            for (name, m) in map.iter() {
                entries.push(Entry {
                    section,
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                });
                payload.push(m);
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.model.config().clone(),
            mask: self.model.mask(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let data_len: usize = payload.iter().map(|m| m.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in payload {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::validation(format!("corrupt checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;

        let mut model = ToyModel::new(header.config)?;
        model.apply_mask(&header.mask)?;
        let mut ema = TensorMap::new();
        let mut has_ema = false;
        let mut seen_model = TensorMap::new();
        let mut cursor = header_end;
        for e in header.tensors {
            let n = e.rows * e.cols;
            let end = cursor
                .checked_add(n * 8)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| corrupt("truncated tensor data"))?;
            let data: Vec<f64> = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cursor = end;
            let name: TensorName = e.name.parse()?;
            let m = Matrix::new(e.rows, e.cols, data)?;
            match e.section {
                Section::Model => {
                    model.set_tensor(&name, m.clone())?;
                    seen_model.insert(name, m);
                }
                Section::Ema => {
                    let expected = model
                        .tensor(&name)
                        .ok_or_else(|| corrupt(&format!("ema tensor {name} not in model")))?;
                    if expected.shape() != m.shape() {
                        return Err(corrupt(&format!("ema tensor {name} has wrong shape")));
                    }
                    has_ema = true;
                    ema.insert(name, m);
                }
            }
        }
        if cursor != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        if seen_model.len() != model.tensor_names().len() {
            return Err(corrupt("missing model tensors"));
        }
        Ok(Self {
            meta: header.meta,
            model,
            ema: has_ema.then_some(ema),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The weights evaluation should use: the shadow where one exists,
    /// live weights elsewhere.
    pub fn eval_model(&self) -> Result<ToyModel> {
        let mut m = self.model.clone();
        if let Some(ema) = &self.ema {
            for (name, v) in ema.iter() {
                m.set_tensor(name, v.clone())?;
            }
        }
        Ok(m)
    }
}
