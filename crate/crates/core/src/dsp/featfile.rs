//! `MDMFEAT1` feature dump: magic, u32 LE header length, JSON header,
//! then row-major little-endian f32 values.

use serde::{Deserialize, Serialize};

use super::{DspConfig, FeatureLayout, MixedFeature};
use crate::error::{format_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 8] = b"MDMFEAT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFileHeader {
    pub rows: usize,
    pub cols: usize,
    pub layout: FeatureLayout,
    pub config: DspConfig,
    pub normalized: bool,
    #[serde(default)]
    pub source_id: String,
}

pub fn write_feature_file<T: Scalar>(
    feat: &MixedFeature<T>,
    cfg: &DspConfig,
    source_id: &str,
) -> Result<Vec<u8>> {
    let header = FeatureFileHeader {
        rows: feat.rows(),
        cols: feat.cols(),
        layout: feat.layout.clone(),
        config: cfg.clone(),
        normalized: feat.normalized,
        source_id: source_id.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + feat.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in feat.data.data() {
        out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_feature_file<T: Scalar>(bytes: &[u8]) -> Result<(FeatureFileHeader, MixedFeature<T>)> {
    if bytes.len() < 12 || &bytes[..8] != FEATURE_MAGIC {
        return Err(format_err!("missing MDMFEAT1 magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| format_err!("truncated feature header"))?;
    let header: FeatureFileHeader = serde_json::from_slice(body)?;
    let payload = &bytes[12 + hlen..];
    if payload.len() != header.rows * header.cols * 4 {
        return Err(format_err!(
            "payload holds {} bytes, header declares {}x{} f32",
            payload.len(),
            header.rows,
            header.cols
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let feat = MixedFeature {
        data: Tensor::new(vec![header.rows, header.cols], data)?,
        layout: header.layout.clone(),
        normalized: header.normalized,
    };
    Ok((header, feat))
}
