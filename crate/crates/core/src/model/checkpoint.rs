//! `MDMCKPT1` checkpoint files: magic, little-endian `u32` header length,
//! JSON header, then every parameter as row-major little-endian `f32`.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::emotion::EmotionModel;
use crate::error::{format_err, validation_err, Result};
use crate::scalar::Scalar;
use crate::symbolic::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDMCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload that follows the header.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    /// Caller-defined metadata (feature config, normalization, training setup).
    pub extra: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

pub fn save_checkpoint<T: Scalar>(
    model: &EmotionModel<T>,
    extra: serde_json::Value,
) -> Result<Vec<u8>> {
    let mut records = Vec::with_capacity(model.params().len());
    let mut payload = Vec::with_capacity(model.params().num_scalars() * 4);
    for p in model.params().iter() {
        records.push(ParamRecord {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: payload.len(),
        });
        for &v in p.tensor.data() {
            payload.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        model: model.config().clone(),
        vocab: *model.vocab(),
        extra,
        params: records,
    };
    let json = serde_json::to_vec(&header)?;
    let len =
        u32::try_from(json.len()).map_err(|_| validation_err!("checkpoint header too large"))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_checkpoint_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format_err!("not an MDMCKPT1 checkpoint"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| format_err!("checkpoint header truncated"))?;
    Ok((serde_json::from_slice(body)?, 12 + len))
}

/// Rebuild a model from checkpoint bytes; the parameter manifest must match
/// the shapes implied by the stored configuration exactly.
pub fn load_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(EmotionModel<T>, CheckpointHeader)> {
    let (header, start) = read_checkpoint_header(bytes)?;
    let payload = &bytes[start..];
    let mut model = EmotionModel::<T>::new(header.model.clone(), header.vocab, 0)?;
    let store = model.params_mut();
    if store.len() != header.params.len() {
        return Err(validation_err!(
            "checkpoint lists {} parameters, configuration implies {}",
            header.params.len(),
            store.len()
        ));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, rec) in ids.into_iter().zip(&header.params) {
        let expected = store.get(id).shape().to_vec();
        if rec.name != store.name(id) || rec.shape != expected {
            return Err(validation_err!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                rec.name,
                rec.shape,
                store.name(id),
                expected
            ));
        }
        let n = store.get(id).len();
        let raw = payload
            .get(rec.offset..rec.offset + 4 * n)
            .ok_or_else(|| format_err!("checkpoint payload truncated at {}", rec.name))?;
        let dst = store.get_mut(id).data_mut();
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        }
    }
    Ok((model, header))
}
