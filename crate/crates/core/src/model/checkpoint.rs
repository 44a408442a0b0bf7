//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "UNIDSCKP"
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (configs, vocab hash, buckets, tensor names)
//! count      u32
//! count × { name_len u32, name bytes, ndim u32, dims u64 × ndim, data f32 × prod(dims) }
//! ```
//!
//! Tensors appear in [`Params::layout`] order. Nothing time- or
//! host-dependent is stored, so equal states serialize to equal bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, TrainConfig};
use super::transformer::{Params, Tensor, Transformer};
use crate::error::{Error, Result};
use crate::schema::BucketTable;

pub const MAGIC: &[u8; 8] = b"UNIDSCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_hash: String,
    pub buckets: BucketTable,
    pub tensor_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Transformer<f32>,
}

impl Checkpoint {
    pub fn new(model: Transformer<f32>, train: TrainConfig, vocab_hash: String, buckets: BucketTable) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                model: model.config.clone(),
                train,
                vocab_hash,
                buckets,
                tensor_names: model.params.tensors.iter().map(|t| t.name.clone()).collect(),
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialization is infallible");
        let mut out = Vec::with_capacity(header.len() + self.model.params.num_elements() * 4 + 1024);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.model.params.tensors.len() as u32).to_le_bytes());
        for t in &self.model.params.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CheckpointFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!("unsupported format version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::CheckpointFormat(format!("tensor `{name}` too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::CheckpointFormat("overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::CheckpointFormat("trailing bytes".into()));
        }
        let names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
        if names != header.tensor_names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::CheckpointFormat("tensor names disagree with header".into()));
        }
        let params = Params::from_tensors(&header.model, tensors)?;
        let model = Transformer::from_params(header.model.clone(), params)?;
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was trained with the vocabulary whose hash
    /// is `vocab_hash`.
    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.header.vocab_hash == vocab_hash {
            Ok(())
        } else {
            Err(Error::VocabMismatch {
                expected: self.header.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            })
        }
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CheckpointFormat("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            embed_dim: 4,
            ffn_dim: 8,
            max_seq_len: 16,
            dropout: 0.1,
            vocab_size: 9,
        };
        Checkpoint::new(
            Transformer::new(cfg, 7).unwrap(),
            TrainConfig::default(),
            "abc".into(),
            BucketTable::default(),
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..8], MAGIC);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn vocab_check() {
        let c = sample();
        assert!(c.check_vocab("abc").is_ok());
        assert!(matches!(c.check_vocab("xyz"), Err(Error::VocabMismatch { .. })));
    }
}
