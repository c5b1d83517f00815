//! Self-describing checkpoint files.
//!
//! Layout: the 8-byte magic `WICCKPT1`, a little-endian `u64` header length,
//! the JSON header, then every parameter array as little-endian `f32` in the
//! order the header lists them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::tokenizer::Vocab;

pub const MAGIC: &[u8; 8] = b"WICCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &EncoderModel, vocab: &Vocab) -> Result<Vec<u8>> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Data(format!(
            "vocabulary of {} does not match model vocab_size {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab_hash: vocab.hash(),
        vocab: vocab.tokens().to_vec(),
        params: model
            .config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| ParamEntry { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EncoderModel, Vocab)> {
    let bad = |m: &str| Error::Data(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    if vocab.hash() != header.vocab_hash {
        return Err(bad("vocabulary hash mismatch"));
    }
    let expected: Vec<ParamEntry> = header
        .config
        .param_layout()
        .into_iter()
        .map(|(name, shape)| ParamEntry { name, shape })
        .collect();
    if expected != header.params {
        return Err(bad("parameter table does not match the declared architecture"));
    }
    let mut cursor = &bytes[16 + hlen..];
    let mut params = Vec::with_capacity(expected.len());
    for entry in &expected {
        let n: usize = entry.shape.iter().product();
        if cursor.len() < n * 4 {
            return Err(bad(&format!("truncated data for {}", entry.name)));
        }
        let data = cursor[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        cursor = &cursor[n * 4..];
        params.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if !cursor.is_empty() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok((EncoderModel::from_params(header.config, params)?, vocab))
}

pub fn save(path: impl AsRef<Path>, model: &EncoderModel, vocab: &Vocab) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, vocab)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(EncoderModel, Vocab)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
