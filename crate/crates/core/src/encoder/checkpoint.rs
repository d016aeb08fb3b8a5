use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{EncoderConfig, EncoderParams, InputDims};
use crate::artifact::{read_verified, write_checked};
use crate::error::{Error, Result};
use crate::flat::{from_flat, to_flat};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.txt";
pub const CHECKPOINT_PAYLOAD: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    /// Position in the parameter list.
    pub index: usize,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub inputs: InputDims,
    /// Fixed modelling choices, echoed for the record.
    pub gcn_normalization: String,
    pub dropout_placement: String,
    pub payload_bytes: usize,
    pub payload_sha256: String,
    pub params: BTreeMap<String, ParamRecord>,
    /// Free-form training annotations such as the selected round.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// Writes `checkpoint.txt` and the little-endian `f64` payload into `dir`.
pub fn write_checkpoint(
    params: &EncoderParams,
    dir: &Path,
    notes: BTreeMap<String, String>,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut payload = Vec::with_capacity(params.num_scalars() * 8);
    let mut records = BTreeMap::new();
    for (i, (name, t)) in params.names().iter().zip(params.tensors()).enumerate() {
        records.insert(
            name.clone(),
            ParamRecord {
                index: i,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            },
        );
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = write_checked(&dir.join(CHECKPOINT_PAYLOAD), &payload)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        encoder: params.config.clone(),
        inputs: params.dims,
        gcn_normalization: "symmetric with self-loops".into(),
        dropout_placement: "after each graph convolution; between recurrent layers".into(),
        payload_bytes: payload.len(),
        payload_sha256: sum,
        params: records,
        notes,
    };
    fs::write(dir.join(CHECKPOINT_MANIFEST), to_flat(&manifest)?)?;
    Ok(manifest)
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Precondition(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    let m: CheckpointManifest = from_flat(&text)?;
    if m.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {} is not supported",
            m.format_version
        )));
    }
    Ok(m)
}

/// Loads a checkpoint, verifying the payload checksum and that the shape
/// manifest matches the encoder layout exactly.
pub fn read_checkpoint(dir: &Path) -> Result<(EncoderParams, CheckpointManifest)> {
    let m = read_checkpoint_manifest(dir)?;
    let payload = read_verified(&dir.join(CHECKPOINT_PAYLOAD), &m.payload_sha256)?;
    if payload.len() != m.payload_bytes {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, manifest says {}",
            payload.len(),
            m.payload_bytes
        )));
    }
    let reference = EncoderParams::init(&m.encoder, m.inputs)?;
    if m.params.len() != reference.names().len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, encoder has {}",
            m.params.len(),
            reference.names().len()
        )));
    }
    let mut tensors = Vec::with_capacity(m.params.len());
    let mut expected_offset = 0;
    for (i, (name, t)) in reference.names().iter().zip(reference.tensors()).enumerate() {
        let rec = m
            .params
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {name}")))?;
        if rec.index != i || rec.shape != t.shape() || rec.offset != expected_offset {
            return Err(Error::Format(format!(
                "parameter {name}: manifest has index {} shape {:?} offset {}, expected {i} {:?} {expected_offset}",
                rec.index,
                rec.shape,
                rec.offset,
                t.shape()
            )));
        }
        let end = rec.offset + t.len() * 8;
        if end > payload.len() {
            return Err(Error::Format(format!("parameter {name} runs past the payload")));
        }
        let data = payload[rec.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor::new(&rec.shape, data)?);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(Error::Format("checkpoint payload has trailing bytes".into()));
    }
    let params = EncoderParams::from_tensors(&m.encoder, m.inputs, tensors)?;
    Ok((params, m))
}
