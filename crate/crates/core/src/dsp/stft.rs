use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Signal;
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
        .collect()
}

/// One-sided short-time spectrum: `frames[f][k]` for `k in 0..=window_len/2`.
#[derive(Clone, Debug)]
pub struct Stft {
    pub frames: Vec<Vec<Complex64>>,
    pub window_len: usize,
    pub hop: usize,
}

impl Stft {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn power(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Energy of frame `f` over the full (two-sided) spectrum.
    pub fn frame_energy(&self, f: usize) -> f64 {
        let frame = &self.frames[f];
        let last = frame.len() - 1;
        frame
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = if k == 0 || (k == last && self.window_len % 2 == 0) { 1.0 } else { 2.0 };
                w * c.norm_sqr()
            })
            .sum()
    }
}

/// Hann-windowed frames without padding; frame count is
/// `floor((len − window_len) / hop) + 1`.
pub fn stft(signal: &Signal, window_len: usize, hop: usize) -> Result<Stft> {
    if hop == 0 || window_len < hop {
        return Err(Error::arg(format!(
            "need window_len >= hop > 0, got window {window_len}, hop {hop}"
        )));
    }
    if signal.len() < window_len {
        return Err(Error::arg(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            signal.len()
        )));
    }
    let count = (signal.len() - window_len) / hop + 1;
    let window = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let bins = window_len / 2 + 1;
    let frames = (0..count)
        .map(|f| {
            let start = f * hop;
            let mut buf: Vec<Complex64> = signal.samples[start..start + window_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| Complex64::new(x * w, 0.0))
                .collect();
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf.truncate(bins);
            buf
        })
        .collect();
    Ok(Stft {
        frames,
        window_len,
        hop,
    })
}
