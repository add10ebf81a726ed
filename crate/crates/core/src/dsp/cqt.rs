use ndarray::Array2;

use super::{hann, Signal};
use crate::error::{Error, Result};

pub const PITCH_CLASSES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

/// C1.
pub const DEFAULT_F_MIN: f64 = 32.703_195_662_574_764;

/// Column norm below which a chroma frame counts as silent.
pub const SILENCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CqtParams {
    pub f_min: f64,
    pub bins_per_octave: usize,
    pub octaves: usize,
    pub hop: usize,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self {
            f_min: DEFAULT_F_MIN,
            bins_per_octave: 12,
            octaves: 7,
            hop: 512,
        }
    }
}

impl CqtParams {
    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.octaves
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        let ratio = 2f64.powf(1.0 / self.bins_per_octave as f64);
        let mut f = self.f_min;
        (0..self.n_bins())
            .map(|_| {
                let out = f;
                f *= ratio;
                out
            })
            .collect()
    }

    /// `1 / (2^(1/bpo) − 1)`.
    pub fn quality(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct CqtSpectrum {
    /// `bins × frames`.
    pub magnitudes: Array2<f64>,
    pub bin_frequencies: Vec<f64>,
    pub bins_per_octave: usize,
    pub f_min: f64,
}

impl CqtSpectrum {
    /// Time-averaged magnitude per bin.
    pub fn mean_magnitudes(&self) -> Vec<f64> {
        let frames = self.magnitudes.ncols().max(1) as f64;
        self.magnitudes
            .rows()
            .into_iter()
            .map(|r| r.sum() / frames)
            .collect()
    }
}

struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Precomputed matched kernels for one parameter set and sample rate.
pub struct CqtPlan {
    params: CqtParams,
    sample_rate: u32,
    freqs: Vec<f64>,
    kernels: Vec<Kernel>,
}

impl CqtPlan {
    pub fn new(params: CqtParams, sample_rate: u32) -> Result<Self> {
        if params.bins_per_octave == 0 || params.octaves == 0 || params.hop == 0 {
            return Err(Error::arg("CQT needs positive bins per octave, octaves and hop"));
        }
        let top = params.f_min * 2f64.powi(params.octaves as i32);
        if !(params.f_min > 0.0) || top >= sample_rate as f64 / 2.0 {
            return Err(Error::arg(format!(
                "CQT range {}..{top} Hz exceeds Nyquist for {sample_rate} Hz",
                params.f_min
            )));
        }
        let q = params.quality();
        let freqs = params.bin_frequencies();
        let kernels = freqs
            .iter()
            .map(|&f| {
                let mut len = (q * sample_rate as f64 / f).ceil() as usize;
                len |= 1;
                let window = symmetric_hann(len);
                let norm: f64 = window.iter().sum();
                let half = (len / 2) as f64;
                let w = 2.0 * std::f64::consts::PI * f / sample_rate as f64;
                let (re, im) = window
                    .iter()
                    .enumerate()
                    .map(|(n, win)| {
                        let phase = w * (n as f64 - half);
                        (win * phase.cos() / norm, -win * phase.sin() / norm)
                    })
                    .unzip();
                Kernel { re, im }
            })
            .collect();
        Ok(Self {
            params,
            sample_rate,
            freqs,
            kernels,
        })
    }

    pub fn params(&self) -> &CqtParams {
        &self.params
    }

    /// Frames are centred on multiples of the hop; samples outside the
    /// signal count as zero.
    pub fn transform(&self, signal: &Signal) -> Result<CqtSpectrum> {
        if signal.sample_rate != self.sample_rate {
            return Err(Error::arg(format!(
                "plan built for {} Hz, signal is {} Hz",
                self.sample_rate, signal.sample_rate
            )));
        }
        let x = &signal.samples;
        let frames = x.len() / self.params.hop + 1;
        let mut mags = Array2::zeros((self.kernels.len(), frames));
        for (b, k) in self.kernels.iter().enumerate() {
            let half = k.re.len() / 2;
            for j in 0..frames {
                let center = j * self.params.hop;
                let start = center as isize - half as isize;
                let lo = (-start).max(0) as usize;
                let hi = k.re.len().min((x.len() as isize - start).max(0) as usize);
                let (mut re, mut im) = (0.0, 0.0);
                for n in lo..hi {
                    let s = x[(start + n as isize) as usize];
                    re += s * k.re[n];
                    im += s * k.im[n];
                }
                mags[[b, j]] = (re * re + im * im).sqrt();
            }
        }
        Ok(CqtSpectrum {
            magnitudes: mags,
            bin_frequencies: self.freqs.clone(),
            bins_per_octave: self.params.bins_per_octave,
            f_min: self.params.f_min,
        })
    }
}

fn symmetric_hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let mut w = hann(len - 1);
    w.push(0.0);
    w
}

/// Magnitude CQT with matched complex-sinusoid kernels.
pub fn cqt(signal: &Signal, params: &CqtParams) -> Result<CqtSpectrum> {
    CqtPlan::new(*params, signal.sample_rate)?.transform(signal)
}

#[derive(Clone, Debug)]
pub struct Chromagram {
    /// `12 × frames`, columns L2-normalised; silent columns are zero.
    pub energies: Array2<f64>,
    pub voiced: Vec<bool>,
    /// Column norms before normalisation.
    pub norms: Vec<f64>,
}

impl Chromagram {
    pub fn frames(&self) -> usize {
        self.energies.ncols()
    }

    /// Index of the strongest pitch class in frame `f`, if voiced.
    pub fn argmax(&self, f: usize) -> Option<usize> {
        if !self.voiced[f] {
            return None;
        }
        let col = self.energies.column(f);
        (0..12).max_by(|&a, &b| col[a].total_cmp(&col[b]))
    }
}

/// Folds CQT magnitudes into twelve pitch classes.
pub fn chroma_from_cqt(c: &CqtSpectrum) -> Result<Chromagram> {
    if c.bins_per_octave == 0 || c.bins_per_octave % 12 != 0 {
        return Err(Error::arg(format!(
            "bins per octave must be a multiple of 12, got {}",
            c.bins_per_octave
        )));
    }
    let per_semitone = c.bins_per_octave / 12;
    let base_midi = (69.0 + 12.0 * (c.f_min / 440.0).log2()).round() as i64;
    let base_class = base_midi.rem_euclid(12) as usize;
    let frames = c.magnitudes.ncols();
    let mut energies = Array2::zeros((12, frames));
    for b in 0..c.magnitudes.nrows() {
        let class = (base_class + (b + per_semitone / 2) / per_semitone) % 12;
        for f in 0..frames {
            energies[[class, f]] += c.magnitudes[[b, f]];
        }
    }
    let mut voiced = vec![false; frames];
    let mut norms = vec![0.0; frames];
    for f in 0..frames {
        let mut col = energies.column_mut(f);
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms[f] = norm;
        if norm > SILENCE_FLOOR {
            col.mapv_inplace(|x| x / norm);
            voiced[f] = true;
        } else {
            col.fill(0.0);
        }
    }
    Ok(Chromagram {
        energies,
        voiced,
        norms,
    })
}
