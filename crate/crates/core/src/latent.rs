//! Mel-spectrogram latents: audio to a `tokens × channels` grid and back.
//!
//! A clip's log-mel spectrogram (256 frames × 16 bands) is normalised and cut
//! into 64 tokens of 4 consecutive frames. Decoding resynthesises audio with
//! one sinusoid per band at the band centre, which is enough for the chroma,
//! CQT and band-energy metrics to compare edited latents with their sources.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::dsp::{mel_spectrogram, MelBank, MelParams, Signal, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::flow::Latent;

/// Offset and scale mapping log-mel values to roughly zero mean and unit
/// variance on the synthetic corpus.
pub const LATENT_OFFSET: f64 = 0.7;
pub const LATENT_SCALE: f64 = 4.25;

/// Log-mel values are clamped below here before normalising, so the
/// zero padding after a clip does not sit far below its noise floor.
pub const MIN_LOG_POWER: f64 = -10.0;

/// Log-mel values above this are clipped when decoding.
const MAX_LOG_POWER: f64 = 14.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec {
    pub mel: MelParams,
    pub sample_rate: u32,
    pub frames_per_token: usize,
    pub tokens: usize,
    pub offset: f64,
    pub scale: f64,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self {
            mel: MelParams::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            frames_per_token: 4,
            tokens: 64,
            offset: LATENT_OFFSET,
            scale: LATENT_SCALE,
        }
    }
}

impl LatentCodec {
    pub fn frames(&self) -> usize {
        self.tokens * self.frames_per_token
    }

    pub fn channels(&self) -> usize {
        self.frames_per_token * self.mel.n_mels
    }

    /// Samples needed for exactly [`Self::frames`] mel frames.
    pub fn samples(&self) -> usize {
        (self.frames() - 1) * self.mel.hop + self.mel.window_len
    }

    /// Zero-pads (or truncates) the signal to [`Self::samples`] before analysis.
    pub fn encode(&self, signal: &Signal) -> Result<Latent> {
        if signal.sample_rate != self.sample_rate {
            return Err(Error::arg(format!(
                "codec expects {} Hz, got {}",
                self.sample_rate, signal.sample_rate
            )));
        }
        let mut samples = signal.samples.clone();
        samples.resize(self.samples(), 0.0);
        let padded = Signal::new(samples, signal.sample_rate)?;
        let mel = mel_spectrogram(&padded, &self.mel)?;
        Ok(self.patch(&mel))
    }

    /// `frames × n_mels` log-mel to normalised tokens.
    pub fn patch(&self, mel: &Array2<f64>) -> Latent {
        let (f, b) = (self.frames_per_token, self.mel.n_mels);
        Array2::from_shape_fn((self.tokens, self.channels()), |(tok, c)| {
            (mel[[tok * f + c / b, c % b]].max(MIN_LOG_POWER) - self.offset) / self.scale
        })
    }

    /// Normalised tokens back to `frames × n_mels` log-mel.
    pub fn unpatch(&self, latent: &Latent) -> Result<Array2<f64>> {
        self.check(latent)?;
        let (f, b) = (self.frames_per_token, self.mel.n_mels);
        Ok(Array2::from_shape_fn((self.frames(), b), |(fr, m)| {
            latent[[fr / f, (fr % f) * b + m]] * self.scale + self.offset
        }))
    }

    pub fn check(&self, latent: &Latent) -> Result<()> {
        if latent.dim() != (self.tokens, self.channels()) {
            return Err(Error::dim(format!(
                "latent is {:?}, codec expects ({}, {})",
                latent.dim(),
                self.tokens,
                self.channels()
            )));
        }
        Ok(())
    }

    /// Band-centre sinusoid resynthesis, trimmed to `seconds` of audio.
    pub fn decode(&self, latent: &Latent, seconds: f64) -> Result<Signal> {
        let mel = self.unpatch(latent)?;
        if mel.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { step: 0 });
        }
        let bank = MelBank::new(&self.mel, self.sample_rate);
        let n = self.mel.window_len as f64;
        let hop = self.mel.hop as f64;
        let len = ((seconds * self.sample_rate as f64).round() as usize).min(self.samples());
        // A unit sinusoid at a band centre puts about (N/4)^2 * 1.5 into
        // that band's power (main lobe over three bins).
        let gain = 4.0 / (n * 1.5f64.sqrt());
        let amps = mel.mapv(|l| gain * (0.5 * l.min(MAX_LOG_POWER)).exp());
        let frames = mel.nrows();
        let mut out = vec![0.0; len];
        for (m, &fc) in bank.centers.iter().enumerate() {
            let w = 2.0 * PI * fc / self.sample_rate as f64;
            for (i, y) in out.iter_mut().enumerate() {
                // Frame f is centred on sample f * hop + N / 2.
                let pos = ((i as f64 - n / 2.0) / hop).clamp(0.0, (frames - 1) as f64);
                let f0 = pos.floor() as usize;
                let f1 = (f0 + 1).min(frames - 1);
                let frac = pos - f0 as f64;
                let a = amps[[f0, m]] * (1.0 - frac) + amps[[f1, m]] * frac;
                *y += a * (w * i as f64).sin();
            }
        }
        Signal::new(out, self.sample_rate)
    }
}

const LATENT_MAGIC: &[u8; 4] = b"RFLT";
const LATENT_VERSION: u32 = 1;

/// Magic, version, rows, cols (u64), then row-major f64, all little-endian.
pub fn encode_latent(latent: &Latent) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * latent.len());
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(latent.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(latent.ncols() as u64).to_le_bytes());
    for x in latent.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<Latent> {
    if bytes.len() < 24 {
        return Err(Error::format(bytes.len() as u64, "truncated latent header"));
    }
    if &bytes[..4] != LATENT_MAGIC {
        return Err(Error::format(0, "not a latent file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LATENT_VERSION {
        return Err(Error::format(4, format!("unsupported latent version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(8, "latent dimensions overflow"))?;
    if bytes.len() - 24 != expected {
        return Err(Error::format(
            24,
            format!("expected {expected} data bytes, found {}", bytes.len() - 24),
        ));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::dim(e.to_string()))
}

pub fn write_latent(path: impl AsRef<Path>, latent: &Latent) -> Result<()> {
    fs::write(path, encode_latent(latent))?;
    Ok(())
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<Latent> {
    decode_latent(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::tone;

    #[test]
    fn geometry() {
        let c = LatentCodec::default();
        assert_eq!(c.frames(), 256);
        assert_eq!(c.channels(), 64);
        assert_eq!(c.samples(), 255 * 256 + 1024);
        let z = c.encode(&tone(440.0, 0.3, 4.0, 16000)).unwrap();
        assert_eq!(z.dim(), (64, 64));
    }

    #[test]
    fn patching_round_trips() {
        let c = LatentCodec::default();
        let mel = Array2::from_shape_fn((256, 16), |(f, m)| (f * 16 + m) as f64 * 0.01 - 3.0);
        let back = c.unpatch(&c.patch(&mel)).unwrap();
        for (a, b) in mel.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn token_holds_consecutive_frames() {
        let c = LatentCodec::default();
        let mel = Array2::from_shape_fn((256, 16), |(f, _)| f as f64);
        let z = c.patch(&mel);
        // Token 3, channel 16 + m is frame 13.
        assert_eq!(z[[3, 16 + 5]] * c.scale + c.offset, 13.0);
    }

    #[test]
    fn decode_preserves_band_energy_roughly() {
        let c = LatentCodec::default();
        let x = tone(1000.0, 0.3, 4.0, 16000);
        let z = c.encode(&x).unwrap();
        let z2 = c.encode(&c.decode(&z, 4.0).unwrap()).unwrap();
        let mel_a = c.unpatch(&z).unwrap();
        let mel_b = c.unpatch(&z2).unwrap();
        let loudest = |m: &Array2<f64>| {
            let row = m.row(100);
            (0..16).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
        };
        assert_eq!(loudest(&mel_a), loudest(&mel_b));
        let peak_a = mel_a.row(100).iter().cloned().fold(f64::MIN, f64::max);
        let peak_b = mel_b.row(100).iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak_a - peak_b).abs() < 1.5, "{peak_a} vs {peak_b}");
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let c = LatentCodec::default();
        assert!(c.decode(&Array2::zeros((32, 64)), 4.0).is_err());
        assert!(c.encode(&tone(440.0, 0.3, 1.0, 8000)).is_err());
    }

    #[test]
    fn latent_file_round_trip() {
        let z = Array2::from_shape_fn((3, 5), |(i, j)| i as f64 - 0.25 * j as f64);
        assert_eq!(decode_latent(&encode_latent(&z)).unwrap(), z);
        let bytes = encode_latent(&z);
        assert!(matches!(
            decode_latent(&bytes[..30]),
            Err(Error::Format { offset: 24, .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_latent(&bad), Err(Error::Format { offset: 0, .. })));
    }
}
