//! Checkpoint container.
//!
//! Layout, all integers little-endian: `b"RFCK"`, `u32` version, `u32` length
//! of the JSON-encoded [`NetConfig`], the JSON bytes, `u64` parameter count,
//! that many `f64`, then the SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::Net;
use super::params::NetConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(net: &Net) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(net.config())?;
    let params = net.params();
    let mut out = Vec::with_capacity(20 + header.len() + 8 * params.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for x in params {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.pos as u64, format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Net> {
    if bytes.len() < 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(0, "not a checkpoint file"));
    }
    let body = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
        return Err(Error::format(body as u64, "checksum mismatch"));
    }
    let mut r = Reader {
        bytes: &bytes[..body],
        pos: 4,
    };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u32("header length")? as usize;
    let header_at = r.pos;
    let config: NetConfig = serde_json::from_slice(r.take(header_len, "config header")?)
        .map_err(|e| Error::format(header_at as u64, format!("bad config header: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::format(header_at as u64, e.to_string()))?;
    let count_at = r.pos;
    let count = r.u64("parameter count")? as usize;
    let data_len = count
        .checked_mul(8)
        .ok_or_else(|| Error::format(count_at as u64, "parameter count overflows"))?;
    let data = r.take(data_len, "parameters")?;
    if r.pos != body {
        return Err(Error::format(r.pos as u64, "trailing bytes before checksum"));
    }
    let params = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Net::from_params(config, params).map_err(|e| Error::format(count_at as u64, e.to_string()))
}

pub fn write_checkpoint(path: impl AsRef<Path>, net: &Net) -> Result<()> {
    fs::write(path, encode_checkpoint(net)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Net> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Net {
        let cfg = NetConfig {
            model_dim: 8,
            head_count: 2,
            double_blocks: 1,
            single_blocks: 1,
            audio_tokens: 3,
            latent_channels: 4,
            seed: 7,
            ..NetConfig::default()
        };
        Net::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let net = tiny();
        let back = decode_checkpoint(&encode_checkpoint(&net).unwrap()).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.params(), net.params());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&tiny()).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == (n - 32) as u64));
    }

    #[test]
    fn truncation_and_bad_magic() {
        let bytes = encode_checkpoint(&tiny()).unwrap();
        assert!(matches!(decode_checkpoint(&bytes[..10]), Err(Error::Format { .. })));
        let mut other = bytes.clone();
        other[0] = b'X';
        assert!(matches!(decode_checkpoint(&other), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let net = tiny();
        let mut json: serde_json::Value = serde_json::to_value(net.config()).unwrap();
        json["extra"] = 1.into();
        let header = serde_json::to_vec(&json).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
        for x in net.params() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        assert!(matches!(decode_checkpoint(&out), Err(Error::Format { offset: 12, .. })));
    }
}
