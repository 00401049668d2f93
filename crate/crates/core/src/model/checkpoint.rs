//! Binary checkpoints: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f32` in the order of
//! [`PolicyParams::layout`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::item::Pooling;
use super::params::PolicyParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"RECPOCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Parameter version (optimizer steps applied).
    pub version: u64,
    pub step: usize,
    pub pooling: Pooling,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<F: Scalar>(params: &PolicyParams<F>, step: usize, pooling: Pooling) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: params.config.clone(),
        version: params.version,
        step,
        pooling,
        tensors: PolicyParams::<F>::layout(&params.config)
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &x in t {
            out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PolicyParams<f32>, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.model.validate()?;
    let expected: Vec<TensorEntry> = PolicyParams::<f32>::layout(&header.model)
        .into_iter()
        .map(|(name, shape)| TensorEntry { name, shape })
        .collect();
    if expected != header.tensors {
        return Err(bad("tensor table does not match the model configuration"));
    }
    let mut params = PolicyParams::<f32>::zeros(&header.model);
    let data = &bytes[16 + len..];
    if data.len() != 4 * params.num_parameters() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            4 * params.num_parameters(),
            data.len()
        )));
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    params.set_flat(&values);
    params.version = header.version;
    Ok((params, header))
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint<F: Scalar>(path: &Path, params: &PolicyParams<F>, step: usize, pooling: Pooling) -> Result<()> {
    let bytes = encode_checkpoint(params, step, pooling)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams<f32>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            width: 4,
            ff_width: 8,
            max_context: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut p = PolicyParams::<f32>::init(&tiny(), 9).unwrap();
        p.version = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&path, &p, 5, Pooling::Mean).unwrap();
        let (q, h) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.step, 5);
        assert_eq!(h.pooling, Pooling::Mean);
        assert_eq!(encode_checkpoint(&q, 5, Pooling::Mean).unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = PolicyParams::<f32>::init(&tiny(), 9).unwrap();
        let bytes = encode_checkpoint(&p, 0, Pooling::Last).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"garbage").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
    }
}
