// SPDX-License-Identifier: Apache-2.0
//! Versioned binary checkpoint.
//!
//! ```text
//! magic      8 bytes  "ADPCCKPT"
//! version    u32
//! digest     32 bytes SHA-256 of the config JSON below
//! config     u64 length + JSON (ModelConfig)
//! vocab      u64 length + UTF-8, one token per line
//! tensors    u64 count, then per tensor:
//!            u32 name length + name, u8 kind, u64 rows, u64 cols, rows*cols f64
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{io_error, Result, TrainError};
use crate::model::{AdpcModel, ModelConfig};
use crate::nn::ParamKind;
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADPCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AdpcModel,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn digest_hex(&self) -> String {
        self.model
            .config()
            .digest()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn save_checkpoint(path: &Path, model: &AdpcModel, vocab: &Vocabulary) -> Result<()> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let vocab_text = vocab.to_file_string();
    let mut buf = Vec::with_capacity(64 + 8 * model.params().scalar_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&Sha256::digest(&config));
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(vocab_text.len() as u64).to_le_bytes());
    buf.extend_from_slice(vocab_text.as_bytes());
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for (_, p) in model.params().iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.kind.code());
        let (r, c) = p.value.dim();
        buf.extend_from_slice(&(r as u64).to_le_bytes());
        buf.extend_from_slice(&(c as u64).to_le_bytes());
        for v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_error(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| TrainError::Checkpoint("length overflow".into()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = r.take(32)?.to_vec();
    let n = r.len()?;
    let config_bytes = r.take(n)?;
    if Sha256::digest(config_bytes).as_slice() != digest.as_slice() {
        return Err(TrainError::DigestMismatch);
    }
    let config: ModelConfig =
        serde_json::from_slice(config_bytes).map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
    let n = r.len()?;
    let vocab = Vocabulary::from_file_string(r.utf8(n)?)?;

    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.utf8(name_len)?.to_string();
        let code = r.take(1)?[0];
        let kind = ParamKind::from_code(code).ok_or_else(|| TrainError::Checkpoint(format!("bad kind {code}")))?;
        let (rows, cols) = (r.len()?, r.len()?);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| TrainError::Checkpoint("tensor size overflow".into()))?;
        let data = r.take(
            n.checked_mul(8)
                .ok_or_else(|| TrainError::Checkpoint("tensor size overflow".into()))?,
        )?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        tensors.push((name, kind, value));
    }
    if r.at != bytes.len() {
        return Err(TrainError::Checkpoint("trailing bytes".into()));
    }
    if vocab.len() != config.vocab_size {
        return Err(TrainError::Checkpoint(format!(
            "vocabulary has {} tokens, config expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let model = AdpcModel::from_parts(config, tensors)?;
    Ok(Checkpoint { model, vocab })
}

/// Loads a checkpoint and rejects it unless its config matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.model.config().digest() != expected.digest() {
        return Err(TrainError::DigestMismatch);
    }
    Ok(ck)
}
