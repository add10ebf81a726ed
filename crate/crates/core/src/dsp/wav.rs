//! Mono 16-bit PCM RIFF/WAVE, little-endian.

use std::fs;
use std::path::Path;

use super::Signal;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

pub fn encode(signal: &Signal) -> Vec<u8> {
    let data_len = (signal.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&signal.sample_rate.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &signal.samples {
        let q = (x * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tag(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.pos as u64;
        let got = self.take(4, "chunk tag")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "expected '{}', found '{}'",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Signal> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.tag(b"RIFF")?;
    r.u32("RIFF size")?;
    r.tag(b"WAVE")?;
    let mut sample_rate = None;
    loop {
        let at = r.pos as u64;
        let id: [u8; 4] = r.take(4, "chunk id")?.try_into().unwrap();
        let size = r.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                let body_at = r.pos;
                let format = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                if format != 1 || bits != 16 {
                    return Err(Error::format(
                        body_at as u64,
                        format!("unsupported encoding: format {format}, {bits} bits"),
                    ));
                }
                if channels != 1 {
                    return Err(Error::format(
                        body_at as u64 + 2,
                        format!("expected mono, found {channels} channels"),
                    ));
                }
                if rate == 0 {
                    return Err(Error::format(body_at as u64 + 4, "zero sample rate"));
                }
                if size < 16 {
                    return Err(Error::format(at + 4, "fmt chunk too small"));
                }
                r.take(size - 16 + (size & 1), "fmt extension")?;
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate
                    .ok_or_else(|| Error::format(at, "data chunk before fmt chunk"))?;
                if size % 2 != 0 {
                    return Err(Error::format(at + 4, "odd data length for 16-bit samples"));
                }
                let data = r.take(size, "sample data")?;
                let samples = data
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / SCALE)
                    .collect();
                return Ok(Signal {
                    samples,
                    sample_rate: rate,
                });
            }
            _ => {
                r.take(size + (size & 1), "unknown chunk")?;
            }
        }
    }
}

pub fn wav_write(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    fs::write(path, encode(signal))?;
    Ok(())
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<Signal> {
    decode(&fs::read(path)?)
}
