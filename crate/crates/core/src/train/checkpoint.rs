//! Binary checkpoint files.
//!
//! Layout: the magic bytes `AUGLSTM\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, every
//! tensor as row-major little-endian `f64`s in header order, and finally the
//! SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adam::{Adam, AdamConfig, AdamState};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::ClassifierParams;
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::trainer::{Checkpoint, EpochMetrics, TrainSpec};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"AUGLSTM\0";
const PREFIX: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: TrainSpec,
    vocab_size: usize,
    epoch: usize,
    rng: RngState,
    history: Vec<EpochMetrics>,
    best_epoch: usize,
    best_valid_acc: Option<f64>,
    stale_epochs: usize,
    vocabulary: Option<Vocabulary>,
    adam: AdamConfig,
    adam_steps: Vec<u64>,
    tensors: Vec<TensorEntry>,
}

fn all_tensors(ckpt: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    let names: Vec<String> = ckpt.params.named().into_iter().map(|(n, _)| n).collect();
    for (n, t) in ckpt.params.named() {
        out.push((format!("param.{n}"), t));
    }
    for (n, t) in ckpt.best_params.named() {
        out.push((format!("best.{n}"), t));
    }
    for (n, s) in names.iter().zip(&ckpt.optimizer.states) {
        out.push((format!("adam.m.{n}"), &s.first_moment));
    }
    for (n, s) in names.iter().zip(&ckpt.optimizer.states) {
        out.push((format!("adam.v.{n}"), &s.second_moment));
    }
    out
}

/// Serializes `ckpt` to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = all_tensors(ckpt);
    let header = Header {
        spec: ckpt.spec.clone(),
        vocab_size: ckpt.params.vocab_size(),
        epoch: ckpt.epoch,
        rng: ckpt.rng,
        history: ckpt.history.clone(),
        best_epoch: ckpt.best_epoch,
        best_valid_acc: ckpt.best_valid_acc.is_finite().then_some(ckpt.best_valid_acc),
        stale_epochs: ckpt.stale_epochs,
        vocabulary: ckpt.vocabulary.clone(),
        adam: ckpt.optimizer.config,
        adam_steps: ckpt.optimizer.states.iter().map(|s| s.step_count).collect(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Parses and validates checkpoint bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX {
        return Err(Error::CheckpointTruncated(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::CheckpointMalformed("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX
        .checked_add(header_len)
        .filter(|&e| e + DIGEST <= bytes.len())
        .ok_or_else(|| Error::CheckpointTruncated("header extends past end of file".into()))?;
    let body_end = bytes.len() - DIGEST;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        // Distinguish a short file from a corrupted one where possible.
        if let Ok(header) = serde_json::from_slice::<Header>(&bytes[PREFIX..header_end]) {
            let need: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
            if header_end + need + DIGEST > bytes.len() {
                return Err(Error::CheckpointTruncated(format!(
                    "payload needs {need} bytes, file has {}",
                    bytes.len() - header_end - DIGEST
                )));
            }
        }
        return Err(Error::CheckpointChecksum);
    }
    let header: Header = serde_json::from_slice(&bytes[PREFIX..header_end])
        .map_err(|e| Error::CheckpointMalformed(format!("header: {e}")))?;

    let mut offset = header_end;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + n * 8;
        if end > body_end {
            return Err(Error::CheckpointTruncated(format!("tensor {} runs past end of file", entry.name)));
        }
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&entry.shape, data)
            .map_err(|e| Error::CheckpointMalformed(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), t));
        offset = end;
    }
    if offset != body_end {
        return Err(Error::CheckpointMalformed(format!("{} unexpected trailing bytes", body_end - offset)));
    }

    let group = |prefix: &str| -> Vec<(String, Tensor)> {
        tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    };
    let config = &header.spec.model;
    config
        .validate()
        .map_err(|e| Error::CheckpointMalformed(format!("embedded config: {e}")))?;
    let params = ClassifierParams::from_named(config, header.vocab_size, group("param."))?;
    let best_params = ClassifierParams::from_named(config, header.vocab_size, group("best."))?;
    let m = ClassifierParams::from_named(config, header.vocab_size, group("adam.m."))?;
    let v = ClassifierParams::from_named(config, header.vocab_size, group("adam.v."))?;
    let m = m.tensors().into_iter().cloned().collect::<Vec<_>>();
    let v = v.tensors().into_iter().cloned().collect::<Vec<_>>();
    if header.adam_steps.len() != m.len() {
        return Err(Error::CheckpointMalformed("optimizer state count does not match tensors".into()));
    }
    let states = header
        .adam_steps
        .iter()
        .zip(m.into_iter().zip(v))
        .map(|(&step_count, (first_moment, second_moment))| AdamState {
            step_count,
            first_moment,
            second_moment,
        })
        .collect();
    Ok(Checkpoint {
        spec: header.spec,
        params,
        best_params,
        optimizer: Adam {
            config: header.adam,
            states,
        },
        rng: header.rng,
        epoch: header.epoch,
        history: header.history,
        best_epoch: header.best_epoch,
        best_valid_acc: header.best_valid_acc.unwrap_or(f64::NEG_INFINITY),
        stale_epochs: header.stale_epochs,
        vocabulary: header.vocabulary,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample() -> Checkpoint {
        let mut model = ModelConfig::baseline(2, 3, 4, 2);
        model.pooling = true;
        model.pooling_dim = 2;
        let mut c = Checkpoint::init(TrainSpec::new(model, 2, 5), 7, None).unwrap();
        c.vocabulary = Some(Vocabulary::from(vec!["a".to_string(), "b".to_string()]));
        c.history.push(EpochMetrics {
            epoch: 1,
            train_loss: 0.6875,
            train_acc: 0.5,
            valid_acc: 1.0 / 3.0,
        });
        c.best_valid_acc = 1.0 / 3.0;
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn header_floats_round_trip_bitwise() {
        let mut c = sample();
        // Values whose shortest decimal form needs all 17 digits.
        c.history[0].train_loss = 1.1057808879689217;
        c.history.push(EpochMetrics {
            epoch: 2,
            train_loss: f64::from_bits(0x3ff1_b0fd_7f0a_1c2b),
            train_acc: 0.1 + 0.2,
            valid_acc: f64::MIN_POSITIVE,
        });
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        for (a, b) in back.history.iter().zip(&c.history) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.train_acc.to_bits(), b.train_acc.to_bits());
            assert_eq!(a.valid_acc.to_bits(), b.valid_acc.to_bits());
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[8] = 9;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::CheckpointVersion { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [4, 30, bytes.len() - 100] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CheckpointTruncated(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        let i = bytes.len() - 200;
        bytes[i] ^= 0x40;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointChecksum)));
    }

    #[test]
    fn shape_mismatch_against_embedded_config() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let text = String::from_utf8_lossy(&bytes[PREFIX..]).into_owned();
        assert!(text.contains("\"hidden_size\":3"));
        let needle = b"\"hidden_size\":3";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut forged = bytes[..bytes.len() - DIGEST].to_vec();
        forged[pos + needle.len() - 1] = b'4';
        let digest = Sha256::digest(&forged);
        forged.extend_from_slice(&digest);
        assert!(matches!(decode_checkpoint(&forged), Err(Error::CheckpointShape { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CheckpointMalformed(_))));
    }
}
