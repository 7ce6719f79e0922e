//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes   b"RDACKPT\0"
//! len     u64       header length in bytes
//! header  JSON      {"format_version", "seed", "params": [{"name", "shape"}], "meta"}
//! blocks  f64 LE    one block per parameter, in header order
//! ```
//!
//! The header is serialized from ordered structures only, so identical
//! content always produces identical bytes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"RDACKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub seed: u64,
    pub params: Vec<ParamHeader>,
    /// Model-specific description (vocabulary, ontology, dimensions).
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    seed: u64,
    meta: serde_json::Value,
    params: &ParamStore<T>,
) -> Result<(), NumericsError> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        seed,
        params: params
            .iter()
            .map(|(name, t)| ParamHeader {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| NumericsError::Checkpoint(format!("header: {e}")))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.num_scalars() * 8);
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(
    mut input: R,
) -> Result<(CheckpointHeader, ParamStore<T>), NumericsError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)
        .map_err(|e| NumericsError::Checkpoint(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut store = ParamStore::new();
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        store.add(p.name.clone(), Tensor::new(p.shape.clone(), data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NumericsError::Checkpoint(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    Ok((header, store))
}
