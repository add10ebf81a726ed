use ndarray::Array2;

use super::{stft, Signal};
use crate::error::Result;

/// Floor applied before log compression.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelParams {
    pub n_mels: usize,
    pub window_len: usize,
    pub hop: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            n_mels: 16,
            window_len: 1024,
            hop: 256,
            f_min: 0.0,
            f_max: None,
        }
    }
}

/// Triangular filters over the one-sided power spectrum, unit peak.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// `n_mels × bins`.
    pub weights: Array2<f64>,
    /// Centre frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelBank {
    pub fn new(params: &MelParams, sample_rate: u32) -> Self {
        let bins = params.window_len / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let f_max = params.f_max.unwrap_or(nyquist);
        let (lo, hi) = (hz_to_mel(params.f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..params.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (params.n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / params.window_len as f64;
        let mut weights = Array2::zeros((params.n_mels, bins));
        for m in 0..params.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        Self {
            weights,
            centers: edges[1..=params.n_mels].to_vec(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }
}

/// Mel-band power, `frames × n_mels`, before log compression.
pub fn mel_power(signal: &Signal, params: &MelParams) -> Result<Array2<f64>> {
    let st = stft(signal, params.window_len, params.hop)?;
    let bank = MelBank::new(params, signal.sample_rate);
    let power = st.power();
    let mut out = Array2::zeros((power.len(), params.n_mels));
    for (f, p) in power.iter().enumerate() {
        for m in 0..params.n_mels {
            out[[f, m]] = bank
                .weights
                .row(m)
                .iter()
                .zip(p)
                .map(|(w, x)| w * x)
                .sum();
        }
    }
    Ok(out)
}

/// `ln(max(mel_power, LOG_FLOOR))`, `frames × n_mels`.
pub fn mel_spectrogram(signal: &Signal, params: &MelParams) -> Result<Array2<f64>> {
    Ok(mel_power(signal, params)?.mapv(|p| p.max(LOG_FLOOR).ln()))
}
