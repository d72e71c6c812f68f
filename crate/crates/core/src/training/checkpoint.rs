//! Versioned checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset      | size | content                                        |
//! |-------------|------|------------------------------------------------|
//! | 0           | 8    | magic `RSSNCKPT`                               |
//! | 8           | 4    | format version (`u32`, currently 1)            |
//! | 12          | 8    | header length `H` in bytes (`u64`)             |
//! | 20          | H    | UTF-8 JSON header `{config, vocab, blocks}`    |
//! | 20 + H      | …    | block values as `f64`, in header block order   |
//!
//! `blocks` lists `{name, shape: [rows, cols]}` entries; each contributes
//! `rows * cols * 8` bytes of row-major values. Nothing follows the last block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"RSSNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    blocks: Vec<BlockHeader>,
}

pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let store = model.store();
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        blocks: store
            .iter()
            .map(|(_, name, t)| BlockHeader {
                name: name.to_owned(),
                shape: t.shape(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + store.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    checkpoint_from_bytes(&fs::read(path)?, None)
}

/// Loads a checkpoint and requires its blocks to fit `expected`.
pub fn load_checkpoint_as(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model> {
    checkpoint_from_bytes(&fs::read(path)?, Some(expected))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn checkpoint_from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(format!("header: {e}")))?;

    let config = expected.cloned().unwrap_or_else(|| header.config.clone());
    let mut model = Model::new(config, header.vocab, 0)?;

    let mut values = Vec::with_capacity(header.blocks.len());
    let mut offset = header_end;
    for b in &header.blocks {
        let n = b.shape[0] * b.shape[1];
        let end = offset
            .checked_add(n * 8)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("truncated values for block `{}`", b.name)))?;
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::from_vec(b.shape[0], b.shape[1], data)?);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }

    let store = &model.params.store;
    if header.blocks.len() != store.len() {
        for (_, name, _) in store.iter() {
            if !header.blocks.iter().any(|b| b.name == name) {
                return Err(bad(format!("block `{name}` missing from checkpoint")));
            }
        }
        return Err(bad(format!(
            "checkpoint has {} blocks, model expects {}",
            header.blocks.len(),
            store.len()
        )));
    }
    let mut assignments = Vec::with_capacity(values.len());
    for (b, v) in header.blocks.iter().zip(values) {
        let id = store
            .id(&b.name)
            .ok_or_else(|| bad(format!("unexpected block `{}` in checkpoint", b.name)))?;
        let want = store.get(id).shape();
        if want != b.shape {
            return Err(bad(format!(
                "block `{}` has shape {:?} in checkpoint but the config expects {:?}",
                b.name, b.shape, want
            )));
        }
        assignments.push((id, v));
    }
    for (id, v) in assignments {
        *model.params.store.get_mut(id) = v;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synthesize_corpus, SynthSpec};

    fn model(hidden: usize) -> Model {
        let (corpus, _) = synthesize_corpus(&SynthSpec { dialogues: 4, ..SynthSpec::default() }, 2).unwrap();
        let config = ModelConfig {
            embed_dim: 5,
            hidden,
            dense: 8,
            attention_units: 8,
            max_dialogue_len: 16,
            ..ModelConfig::default()
        };
        Model::new(config, build_vocab(&corpus, 1).unwrap(), 11).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model(8);
        let bytes = checkpoint_bytes(&m).unwrap();
        let back = checkpoint_from_bytes(&bytes, None).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        for ((_, na, a), (_, nb, b)) in m.store().iter().zip(back.store().iter()) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_and_mismatched() {
        let m = model(8);
        let mut bytes = checkpoint_bytes(&m).unwrap();
        let err = checkpoint_from_bytes(&bytes[..bytes.len() - 3], None).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(checkpoint_from_bytes(&wrong_version, None).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(checkpoint_from_bytes(&bytes, None).unwrap_err().to_string().contains("magic"));

        let bytes = checkpoint_bytes(&m).unwrap();
        let bigger = ModelConfig { hidden: 16, ..m.config.clone() };
        let err = checkpoint_from_bytes(&bytes, Some(&bigger)).unwrap_err().to_string();
        assert!(err.contains("block `encoder.lstm_fwd"), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let m = model(4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(checkpoint_bytes(&back).unwrap(), checkpoint_bytes(&m).unwrap());
        assert!(load_checkpoint(dir.path().join("none")).is_err());
    }
}
