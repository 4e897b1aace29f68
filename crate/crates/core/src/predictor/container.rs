//! Model file format.
//!
//! ```text
//! magic   b"ICPCOVM\0"
//! u32 LE  format version
//! u32 LE  header length
//! header  JSON (feature config, layer shapes, epsilon, loss history)
//! payload f64 LE: feature mean, feature std, then per layer the weights
//!         (row-major) followed by the bias
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::FeatureConfig;
use super::model::{Mlp, ModelParams, OUTPUT_DIM};

const MAGIC: &[u8; 8] = b"ICPCOVM\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    features: FeatureConfig,
    /// `(inputs, outputs)` per layer.
    layers: Vec<(usize, usize)>,
    epsilon: f64,
    loss_history: Vec<f64>,
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        features: params.features,
        layers: params.net.shapes(),
        epsilon: params.epsilon,
        loss_history: params.loss_history.clone(),
    };
    let json = serde_json::to_vec(&header).expect("model header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let values = params
        .feature_mean
        .iter()
        .chain(&params.feature_std)
        .copied()
        .chain(params.net.flatten());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a model file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported model version {version}"));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err("truncated header".into());
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| e.to_string())?;
    let payload = &body[hlen..];
    if payload.len() % 8 != 0 {
        return Err("payload is not a whole number of f64 values".into());
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let d = header.features.dim();
    if header.layers.first().map(|l| l.0) != Some(d)
        || header.layers.last().map(|l| l.1) != Some(OUTPUT_DIM)
        || header.layers.windows(2).any(|w| w[0].1 != w[1].0)
    {
        return Err(format!("inconsistent layer shapes {:?}", header.layers));
    }
    if values.len() < 2 * d {
        return Err("truncated payload".into());
    }
    let net = Mlp::unflatten(&header.layers, &values[2 * d..])
        .ok_or("payload size does not match layer shapes")?;
    Ok(ModelParams {
        features: header.features,
        feature_mean: values[..d].to_vec(),
        feature_std: values[d..2 * d].to_vec(),
        net,
        epsilon: header.epsilon,
        loss_history: header.loss_history,
    })
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(params)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|reason| Error::MalformedFile {
        path: path.to_owned(),
        reason,
    })
}
