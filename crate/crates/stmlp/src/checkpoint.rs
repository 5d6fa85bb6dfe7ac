//! Self-describing checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | content                                          |
//! |------------|--------------------------------------------------|
//! | 8          | magic `STMLPCK1`                                 |
//! | 8          | `u64` header length `H`                          |
//! | `H`        | UTF-8 JSON [`Header`]                            |
//! | 8 · n      | `f64` parameter values, tensors in header order  |
//!
//! Every tensor is stored row-major; `n` is the sum of the shape products.
//! Saving a loaded checkpoint reproduces the file byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stmlp_core::{ModelConfig, ModelParams};

use crate::config::Preprocess;
use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"STMLPCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: ModelConfig,
    /// Producer name and version.
    pub created_by: String,
    /// Seed the parameters were initialized and trained with.
    pub seed: u64,
    #[serde(default)]
    pub preprocess: Preprocess,
    /// Free-form provenance: run configuration, final training metrics, ...
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ModelParams,
}

pub fn created_by() -> String {
    format!("stmlp {}", env!("CARGO_PKG_VERSION"))
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, seed: u64) -> Result<Self> {
        config.validate()?;
        params.check_config(&config)?;
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|t| TensorEntry { name: t.name, shape: t.shape })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            config,
            created_by: created_by(),
            seed,
            preprocess: Preprocess::default(),
            metadata: serde_json::Map::new(),
            tensors,
        };
        Ok(Self { header, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.header.config
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(8 * self.params.param_count());
        for t in self.params.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| AppError::Data(format!("checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing STMLPCK1 magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header length {len} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", header.format_version)));
        }
        header.config.validate().map_err(|e| bad(format!("config: {e}")))?;
        let mut params = ModelParams::zeros(&header.config);
        let expected: Vec<TensorEntry> = params
            .named_tensors()
            .into_iter()
            .map(|t| TensorEntry { name: t.name, shape: t.shape })
            .collect();
        if expected != header.tensors {
            let first = expected
                .iter()
                .zip(&header.tensors)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), header.tensors.len()));
            return Err(bad(format!("tensor table does not match config: {first}")));
        }
        let data = &bytes[end..];
        let want = 8 * params.param_count();
        if data.len() != want {
            return Err(bad(format!("{} bytes of parameter data, expected {want}", data.len())));
        }
        let mut chunks = data.chunks_exact(8);
        for t in params.tensors_mut() {
            for (v, c) in t.iter_mut().zip(&mut chunks) {
                *v = f64::from_le_bytes(c.try_into().unwrap());
            }
        }
        Ok(Self { header, params })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| AppError::io("<checkpoint stream>", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            AppError::Data(msg) => AppError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
