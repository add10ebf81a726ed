//! Signal-processing kernels: STFT, mel spectrogram, constant-Q transform,
//! chromagram and 16-bit PCM WAV I/O.

mod cqt;
mod mel;
mod stft;
pub mod wav;

pub use cqt::{chroma_from_cqt, cqt, CqtParams, CqtPlan, CqtSpectrum, Chromagram, PITCH_CLASSES};
pub use mel::{hz_to_mel, mel_power, mel_spectrogram, mel_to_hz, MelBank, MelParams, LOG_FLOOR};
pub use stft::{hann, stft, Stft};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::arg(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sum of two equally sampled signals, truncated to the shorter one.
    pub fn mix(&self, other: &Signal) -> Result<Self> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::dim("sample rates differ"));
        }
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A pure sinusoid, handy for tests and examples.
pub fn tone(freq: f64, amplitude: f64, seconds: f64, sample_rate: u32) -> Signal {
    let n = (seconds * sample_rate as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
    Signal {
        samples: (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate,
    }
}
