//! Versioned binary checkpoint.
//!
//! ```text
//! magic    8 bytes  "RFIAECK\0"
//! version  u32      1
//! echo_len u32      length of the JSON config echo
//! echo     bytes    {"model": ModelConfig, "train": TrainConfig | null}
//! count    u32      number of tensors
//! per tensor: ndim u32, dims u64 × ndim, values f64 × Π dims
//! ```
//! All integers and floats are little-endian. Tensor order follows
//! `Params::tensors`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AutoencoderModel, ModelConfig, Params};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFIAECK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
}

pub fn encode_checkpoint(model: &AutoencoderModel, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let echo = serde_json::to_vec(&ConfigEcho {
        model: model.config.clone(),
        train: train.cloned(),
    })?;
    let mut out = Vec::with_capacity(model.params.parameter_count() * 8 + echo.len() + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(&echo);
    let shapes = model.params.shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (shape, data) in shapes.iter().zip(model.params.tensors()) {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(AutoencoderModel, Option<TrainConfig>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an autoencoder checkpoint".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let echo_len = c.u32()? as usize;
    let echo: ConfigEcho = serde_json::from_slice(c.take(echo_len)?)?;
    echo.model.validate()?;
    let mut params = Params::zeros(&echo.model);
    let expected = params.shapes();
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, configuration needs {}",
            expected.len()
        )));
    }
    for (shape, dst) in expected.iter().zip(params.tensors_mut()) {
        let ndim = c.u32()? as usize;
        let dims = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Format(format!("tensor shape {dims:?}, expected {shape:?}")));
        }
        let raw = c.take(dst.len() * 8)?;
        for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((AutoencoderModel::from_params(echo.model, params)?, echo.train))
}

pub fn save_checkpoint(path: &Path, model: &AutoencoderModel, train: Option<&TrainConfig>) -> Result<()> {
    let bytes = encode_checkpoint(model, train)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(AutoencoderModel, Option<TrainConfig>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
