//! Model persistence: a text manifest (name, shape, byte offset), one flat
//! little-endian 32-bit payload, a JSON config record, and the vocabulary.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderConfig, Vocab};
use crate::numerics::{ParamStore, Tensor};

pub const MANIFEST_FILE: &str = "params.manifest";
pub const PAYLOAD_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
    #[error("payload size {got} bytes does not match manifest total {want}")]
    PayloadSize { got: usize, want: usize },
    #[error("bad config record: {0}")]
    BadConfig(#[from] serde_json::Error),
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),
}

/// Everything needed to rebuild the model around the raw parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_kind: String,
    pub encoder: EncoderConfig,
    pub classes: Vec<String>,
    pub seed: u64,
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore<f32>,
    vocab: &Vocab,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut payload: Vec<u8> = Vec::new();
    for (name, t) in params.iter() {
        manifest.push_str(&format!("{name} {}x{} {}\n", t.rows, t.cols, payload.len()));
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(PAYLOAD_FILE), payload)?;
    let mut cfg = fs::File::create(dir.join(CONFIG_FILE))?;
    writeln!(cfg, "{}", serde_json::to_string_pretty(meta)?)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    Ok(())
}

pub fn load_checkpoint(
    dir: &Path,
) -> Result<(ParamStore<f32>, Vocab, CheckpointMeta), CheckpointError> {
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let payload = fs::read(dir.join(PAYLOAD_FILE))?;
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut params = ParamStore::new(meta.seed);
    let mut expected_bytes = 0usize;
    for (i, line) in manifest.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |detail: &str| CheckpointError::BadManifest {
            line: i + 1,
            detail: detail.to_string(),
        };
        if parts.len() != 3 {
            return Err(bad("expected `name RxC offset`"));
        }
        let (rows, cols) = parts[1]
            .split_once('x')
            .ok_or_else(|| bad("shape must be RxC"))?;
        let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| bad("bad col count"))?;
        let offset: usize = parts[2].parse().map_err(|_| bad("bad offset"))?;
        let nbytes = rows * cols * 4;
        if offset + nbytes > payload.len() {
            return Err(bad("entry runs past end of payload"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in payload[offset..offset + nbytes].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        params.insert(parts[0], Tensor::from_vec(rows, cols, data));
        expected_bytes += nbytes;
    }
    if expected_bytes != payload.len() {
        return Err(CheckpointError::PayloadSize { got: payload.len(), want: expected_bytes });
    }
    Ok((params, vocab, meta))
}

/// Replaces a freshly built model's parameters with checkpointed ones,
/// verifying that names and shapes line up.
pub fn restore_params(
    target: &mut ParamStore<f32>,
    loaded: &ParamStore<f32>,
) -> Result<(), CheckpointError> {
    let target_names: Vec<String> = target.names().map(String::from).collect();
    let loaded_names: Vec<String> = loaded.names().map(String::from).collect();
    if target_names != loaded_names {
        return Err(CheckpointError::Mismatch(format!(
            "parameter sets differ (model has {}, checkpoint has {})",
            target_names.len(),
            loaded_names.len()
        )));
    }
    for name in &target_names {
        let src = loaded.get(name).expect("name checked");
        let dst = target.get_mut(name).expect("name checked");
        if src.shape() != dst.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "shape of {name} is {:?} in checkpoint but {:?} in model",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data = src.data.clone();
        dst.grad = None;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocab;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut params: ParamStore<f32> = ParamStore::new(5);
        let mut rng = params.init_rng();
        params.insert_weight("a.w", 3, 4, &mut rng);
        params.insert_zeros("b.bias", 1, 4);
        let vocab = Vocab::build(["header checksum field"].into_iter(), 100);
        let meta = CheckpointMeta {
            model_kind: "joint-c".into(),
            encoder: EncoderConfig::default(),
            classes: vec!["x".into(), "y".into()],
            seed: 5,
        };
        save_checkpoint(dir.path(), &params, &vocab, &meta).unwrap();
        let (loaded, v2, m2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m2.model_kind, "joint-c");
        assert_eq!(v2.size(), vocab.size());
        for (name, t) in params.iter() {
            assert_eq!(t.data, loaded.get(name).unwrap().data, "{name}");
        }
    }

    #[test]
    fn shape_mismatch_is_detected_on_restore() {
        let mut a: ParamStore<f32> = ParamStore::new(0);
        a.insert_zeros("w", 2, 2);
        let mut b: ParamStore<f32> = ParamStore::new(0);
        b.insert_zeros("w", 2, 3);
        assert!(matches!(restore_params(&mut a, &b), Err(CheckpointError::Mismatch(_))));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut params: ParamStore<f32> = ParamStore::new(1);
        params.insert_zeros("w", 2, 2);
        let vocab = Vocab::build(["x"].into_iter(), 10);
        let meta = CheckpointMeta {
            model_kind: "svm".into(),
            encoder: EncoderConfig::default(),
            classes: vec!["x".into()],
            seed: 1,
        };
        save_checkpoint(dir.path(), &params, &vocab, &meta).unwrap();
        let payload = std::fs::read(dir.path().join(PAYLOAD_FILE)).unwrap();
        std::fs::write(dir.path().join(PAYLOAD_FILE), &payload[..payload.len() - 4]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
