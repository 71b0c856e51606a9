// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary model file.
//!
//! All integers little-endian.
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `b"NGLM"`                               |
//! | 4      | 4    | format version (`u32`, currently 1)           |
//! | 8      | 4    | vocabulary size `|V|` (`u32`)                 |
//! | 12     | 4    | order `k` (`u32`)                             |
//! | 16     | 8    | row count `(|V|+1)^k` (`u64`)                 |
//! | 24     | 32   | SHA-256 of the payload                        |
//! | 56     | ...  | payload: `rows × |V|` IEEE-754 `f64` logits   |
//!
//! Rows are ordered by context index (see [`NGramSoftmaxLM::context_index`]).
//! A logit of `-inf` (bits `0xfff0000000000000`) is the hard-mask sentinel;
//! NaN and `+inf` are rejected on load.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::NGramSoftmaxLM;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NGLM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;

pub fn encode(model: &NGramSoftmaxLM) -> Vec<u8> {
    let payload: Vec<u8> = model.table().iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.vocab_size() as u32).to_le_bytes());
    out.extend_from_slice(&(model.order() as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_rows() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<NGramSoftmaxLM> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::malformed(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let vocab = u32_at(bytes, 8) as usize;
    let order = u32_at(bytes, 12) as usize;
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if Sha256::digest(payload).as_slice() != &bytes[24..56] {
        return Err(Error::Checksum { path: path.into() });
    }
    let mut model =
        NGramSoftmaxLM::new(vocab, order).map_err(|e| Error::malformed(path, e.to_string()))?;
    if rows != model.num_rows() as u64 || payload.len() != model.table().len() * 8 {
        return Err(Error::malformed(
            path,
            "row count does not match vocabulary and order",
        ));
    }
    for (dst, chunk) in model.table_mut().iter_mut().zip(payload.chunks_exact(8)) {
        let x = f64::from_le_bytes(chunk.try_into().unwrap());
        if x.is_nan() || x == f64::INFINITY {
            return Err(Error::malformed(path, format!("invalid logit {x}")));
        }
        *dst = x;
    }
    Ok(model)
}

pub fn save(model: &NGramSoftmaxLM, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NGramSoftmaxLM> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
