//! Binary model files.
//!
//! Layout: magic `TATK`, format version (`u32` LE), descriptor length
//! (`u32` LE), descriptor as UTF-8 JSON, then every parameter tensor as
//! little-endian `f64` in descriptor order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, TaskKind};

pub const MODEL_MAGIC: &[u8; 4] = b"TATK";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    architecture: Architecture,
    task: TaskKind,
    param_shapes: Vec<Vec<usize>>,
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let descriptor = Descriptor {
        architecture: model.architecture().clone(),
        task: model.task(),
        param_shapes: model.params().iter().map(|p| p.shape().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut out = Vec::with_capacity(12 + json.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |msg: &str| Error::format(path, msg.to_string());
    if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("not a model file (missing TATK magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(bad(&format!("unsupported model format version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| bad("truncated descriptor"))?;
    let descriptor: Descriptor =
        serde_json::from_slice(json).map_err(|e| bad(&format!("descriptor: {e}")))?;
    if descriptor.param_shapes != descriptor.architecture.param_shapes() {
        return Err(bad("parameter shapes disagree with the architecture"));
    }
    let mut cursor = 12 + len;
    let mut params = Vec::with_capacity(descriptor.param_shapes.len());
    for shape in &descriptor.param_shapes {
        let n: usize = shape.iter().product();
        let raw = bytes
            .get(cursor..cursor + 8 * n)
            .ok_or_else(|| bad("truncated parameter data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(shape.clone(), data)?);
        cursor += 8 * n;
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    Model::new(descriptor.architecture, descriptor.task, params)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::format(path, "expected model file is missing"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

/// Hex SHA-256 of the encoded model.
pub fn model_digest(model: &Model) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_model(model)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Activation;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rnn_round_trips(seed in any::<u64>(), hidden in 1usize..6, features in 1usize..4) {
            let m = Model::init(
                Architecture::Rnn { n_features: features, hidden, n_outputs: 2, activation: Activation::Tanh },
                TaskKind::Multiclass,
                seed,
            ).unwrap();
            let bytes = encode_model(&m).unwrap();
            prop_assert_eq!(decode_model(&bytes, Path::new("mem")).unwrap(), m);
        }
    }

    #[test]
    fn header_layout() {
        let m = Model::init(
            Architecture::Mlp {
                seq_len: 1,
                n_features: 1,
                hidden: vec![],
                n_outputs: 1,
                activations: vec![],
            },
            TaskKind::Regression,
            0,
        )
        .unwrap();
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..4], b"TATK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + len + 8 * 2);
    }

    #[test]
    fn rejects_truncated_file() {
        let m = Model::init(
            Architecture::Rnn {
                n_features: 2,
                hidden: 2,
                n_outputs: 1,
                activation: Activation::Tanh,
            },
            TaskKind::Regression,
            0,
        )
        .unwrap();
        let bytes = encode_model(&m).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        assert!(decode_model(b"NOPE", Path::new("m")).is_err());
    }
}
