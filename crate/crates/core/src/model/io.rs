//! Binary model format.
//!
//! Layout: magic `USEM`, `u32` version, `u32` header length, a JSON header
//! (dimensions, taxonomy, attribute names, hyperparameters, payload checksum),
//! then `W`, `U_cat`, `U_sup`, `U_attr`, `B` as little-endian `f32`, each
//! row-major. All integers are little-endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingModel, Hyperparams, Params};
use crate::data::Taxonomy;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"USEM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    embed_dim: usize,
    input_dim: usize,
    leaves: usize,
    supers: usize,
    attributes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: Dims,
    taxonomy: Taxonomy,
    attribute_names: Vec<String>,
    hyperparams: Hyperparams,
    /// SHA-256 of the matrix payload, hex.
    checksum: String,
}

fn push_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    // iter() walks logical row-major order regardless of memory layout
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Serializes a model to bytes.
pub fn write_model(model: &EmbeddingModel) -> Vec<u8> {
    let p = model.params();
    let mut payload = Vec::new();
    for m in [&p.w, &p.u_cat, &p.u_sup, &p.u_attr, &p.b] {
        push_matrix(&mut payload, m);
    }
    let header = Header {
        dims: Dims {
            embed_dim: p.embed_dim(),
            input_dim: p.input_dim(),
            leaves: p.num_leaves(),
            supers: p.num_supers(),
            attributes: p.num_attributes(),
        },
        taxonomy: model.taxonomy().clone(),
        attribute_names: model.attribute_names().to_vec(),
        hyperparams: model.hyperparams().clone(),
        checksum: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Parses a model from bytes.
pub fn read_model(bytes: &[u8]) -> Result<EmbeddingModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format(
            "not a model file (missing USEM magic)".into(),
        ));
    }
    if bytes.len() < 12 {
        return Err(Error::Corrupted("truncated model preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupted("truncated model header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Corrupted(format!("unreadable model header: {e}")))?;
    let payload = &bytes[header_end..];

    let Dims {
        embed_dim: de,
        input_dim: d,
        leaves: c,
        supers: s,
        attributes: a,
    } = header.dims;
    let shapes = [(de, d), (de, c), (de, s), (de, a), (a, c + s)];
    let expected: usize = shapes.iter().map(|(r, k)| r * k * 4).sum();
    if payload.len() != expected {
        return Err(Error::Corrupted(format!(
            "model payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.checksum {
        return Err(Error::Corrupted("model payload checksum mismatch".into()));
    }

    let mut offset = 0;
    let mut mats = shapes.iter().map(|&(r, k)| {
        let n = r * k * 4;
        let vals: Vec<f64> = payload[offset..offset + n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        offset += n;
        Array2::from_shape_vec((r, k), vals).expect("shape matches byte count")
    });
    let params = Params {
        w: mats.next().unwrap(),
        u_cat: mats.next().unwrap(),
        u_sup: mats.next().unwrap(),
        u_attr: mats.next().unwrap(),
        b: mats.next().unwrap(),
    };
    EmbeddingModel::new(
        params,
        header.taxonomy,
        header.attribute_names,
        header.hyperparams,
    )
}

pub fn save_model(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    read_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
