//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `GZMD`, format version `u32`, config JSON
//! (`u32` length + bytes), parameter count `u32`, then per parameter:
//! name (`u16` length + bytes), rank `u32`, extents (`u64` each), and the
//! values as raw `f64`s.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use super::{DiscriminatorConfig, GazePredictorConfig, Model, ModelConfig, ModelError, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GZMD";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode<C: Serialize>(model: &Model<C>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in &model.params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for extent in &tensor.shape {
            out.extend_from_slice(&(*extent as u64).to_le_bytes());
        }
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::CheckpointTruncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode<C: DeserializeOwned>(buf: &[u8]) -> Result<Model<C>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::CheckpointBadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointVersion(version));
    }
    let config_len = r.u32()? as usize;
    let config: C = serde_json::from_slice(r.take(config_len)?)?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, Tensor::new(shape, data)));
    }
    if r.pos != buf.len() {
        return Err(ModelError::CheckpointTruncated);
    }
    Ok(Model {
        config,
        params,
        training_history: Vec::new(),
    })
}

pub fn save_driver(model: &Model<ModelConfig>, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode(model)?)?)
}

pub fn load_driver(path: &Path) -> Result<Model<ModelConfig>> {
    decode(&fs::read(path)?)
}

pub fn save_gaze_predictor(model: &Model<GazePredictorConfig>, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode(model)?)?)
}

pub fn load_gaze_predictor(path: &Path) -> Result<Model<GazePredictorConfig>> {
    decode(&fs::read(path)?)
}

#[allow(dead_code)]
pub fn save_discriminator(model: &Model<DiscriminatorConfig>, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode(model)?)?)
}
