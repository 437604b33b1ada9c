//! Model checkpoints: configuration plus named parameter tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GMCK" | version u16 | reserved u16
//! | config_len u32 | model configuration (JSON, UTF-8)
//! | n_tensors u32
//! | per tensor: name_len u16 | name | rank u8 | dims u32 × rank | f32 data
//! ```
//!
//! Encoding is a pure function of the model, so save → load → save
//! reproduces the same bytes.

use std::path::Path;

use super::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{GameOn, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &GameOn<f32>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::Validation(format!("configuration does not serialize: {e}")))?;
    let mut w = Writer::with_capacity(64 + config.len() + 4 * model.params().numel());
    w.bytes(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u16(0);
    w.u32(config.len() as u32);
    w.bytes(&config);
    w.u32(model.params().len() as u32);
    for (name, t) in model.params().iter() {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u8(t.rank() as u8);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(t.data());
    }
    Ok(w.into_inner())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GameOn<f32>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(&CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let _reserved = r.u16()?;
    let config_len = r.u32()? as usize;
    let at = r.offset();
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?).map_err(|e| Error::Format {
        offset: at,
        message: format!("bad model configuration: {e}"),
    })?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u16()? as usize;
        let at = r.offset();
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "tensor name is not UTF-8".into(),
        })?;
        let at = r.offset();
        let rank = r.u8()? as usize;
        if !(1..=2).contains(&rank) {
            return Err(Error::Format {
                offset: at,
                message: format!("tensor {name} has rank {rank}"),
            });
        }
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let data = r.f32s(shape.iter().product())?;
        tensors.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    let params = ModelParams::from_named(&config, tensors)?;
    GameOn::from_parts(config, params)
}

pub fn save_checkpoint(model: &GameOn<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GameOn<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
