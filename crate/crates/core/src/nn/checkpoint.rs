//! Self-describing parameter container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header,
//! then the raw little-endian values of every tensor in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PGCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: String,
    pub seeds: BTreeMap<String, u64>,
    /// Layer sizes and any other hyperparameters needed to rebuild the network.
    pub hyperparameters: serde_json::Value,
    pub optimizer_step: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode<F: Scalar>(
    params: &ParameterSet<F>,
    seeds: BTreeMap<String, u64>,
    hyperparameters: serde_json::Value,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        precision: F::PRECISION.to_string(),
        seeds,
        hyperparameters,
        optimizer_step: params.step(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.num_scalars() * F::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

/// Parses a container, converting values to `F` when the stored precision differs.
pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Tensor<F>)>)> {
    let bad = |m: &str| Error::Config(format!("malformed checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let mut cursor = 16 + hlen;
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let data: Vec<F> = match header.precision.as_str() {
            "f64" => read_values::<f64>(bytes, &mut cursor, n)
                .ok_or_else(|| bad("truncated data"))?
                .into_iter()
                .map(F::of)
                .collect(),
            "f32" => read_values::<f32>(bytes, &mut cursor, n)
                .ok_or_else(|| bad("truncated data"))?
                .into_iter()
                .map(|v| F::of(v as f64))
                .collect(),
            other => return Err(bad(&format!("unknown precision {other}"))),
        };
        out.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, out))
}

fn read_values<G: Scalar>(bytes: &[u8], cursor: &mut usize, n: usize) -> Option<Vec<G>> {
    let end = *cursor + n * G::BYTES;
    let chunk = bytes.get(*cursor..end)?;
    *cursor = end;
    Some(chunk.chunks_exact(G::BYTES).map(G::read_le).collect())
}

pub fn save<F: Scalar>(
    path: &Path,
    params: &ParameterSet<F>,
    seeds: BTreeMap<String, u64>,
    hyperparameters: serde_json::Value,
) -> Result<()> {
    let bytes = encode(params, seeds, hyperparameters)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<F: Scalar>(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Tensor<F>)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl<F: Scalar> ParameterSet<F> {
    /// Replaces every value by the entry of the same name; layouts must match exactly.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor<F>)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, network expects {}",
                entries.len(),
                self.len()
            )));
        }
        for (name, tensor) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Config(format!("unexpected tensor {name}")))?;
            if self.get(id).shape() != tensor.shape() {
                return Err(Error::Config(format!("shape mismatch for {name}")));
            }
            *self.get_mut(id) = tensor;
        }
        Ok(())
    }
}
