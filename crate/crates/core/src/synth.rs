//! Deterministic additive-synthesis corpus with separable melody, timbre and
//! style.
//!
//! Each note is a sum of eight harmonics whose amplitudes come from the
//! timbre profile; the style shapes the per-note envelope. A quiet seeded
//! noise floor keeps every mel band above the log floor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{Signal, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::latent::LatentCodec;
use crate::flow::Latent;

pub const HARMONICS: usize = 8;
pub const MIN_PITCH: u8 = 36;
pub const MAX_PITCH: u8 = 84;
pub const DEFAULT_DURATION: f64 = 4.0;

const PEAK: f64 = 0.5;
const NOISE_FLOOR: f64 = 3e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timbre {
    Bright,
    Hollow,
    Plucked,
    Bowed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Straight,
    Swing,
    Sustained,
    Staccato,
}

impl Timbre {
    pub const ALL: [Timbre; 4] = [Timbre::Bright, Timbre::Hollow, Timbre::Plucked, Timbre::Bowed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Timbre::Bright => "bright",
            Timbre::Hollow => "hollow",
            Timbre::Plucked => "plucked",
            Timbre::Bowed => "bowed",
        }
    }

    /// Amplitude of harmonic `h` (1-based).
    pub fn harmonic_amplitude(self, h: usize) -> f64 {
        let h = h as f64;
        match self {
            Timbre::Bright | Timbre::Plucked => 1.0 / h,
            Timbre::Hollow => {
                if h as usize % 2 == 1 {
                    1.0 / h
                } else {
                    0.0
                }
            }
            Timbre::Bowed => 1.0 / (h * h),
        }
    }

    /// Timbre-specific envelope factor at `t` seconds into a note.
    fn envelope(self, t: f64, h: usize) -> f64 {
        match self {
            // Upper harmonics die away faster than the fundamental.
            Timbre::Plucked => (-t * (3.0 + 1.5 * h as f64)).exp(),
            Timbre::Bowed => (t / 0.12).min(1.0),
            _ => 1.0,
        }
    }
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Straight, Style::Swing, Style::Sustained, Style::Staccato];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Style::Straight => "straight",
            Style::Swing => "swing",
            Style::Sustained => "sustained",
            Style::Staccato => "staccato",
        }
    }

    /// Amplitude at `t` seconds into note `i` of length `len` seconds.
    fn gate(self, i: usize, t: f64, len: f64) -> f64 {
        let fade = 0.01;
        let ramp = |t: f64, end: f64| (t / fade).min(1.0) * ((end - t) / fade).clamp(0.0, 1.0);
        match self {
            Style::Straight => ramp(t, len),
            Style::Swing => ramp(t, len) * if i % 2 == 0 { 1.0 } else { 0.55 },
            Style::Sustained => (t / 0.05).min(1.0) * ((len + 0.03 - t) / 0.03).clamp(0.0, 1.0),
            Style::Staccato => ramp(t, 0.4 * len),
        }
    }

    /// Vibrato depth in semitones.
    fn vibrato(self) -> f64 {
        match self {
            Style::Sustained => 0.2,
            _ => 0.0,
        }
    }
}

impl std::str::FromStr for Timbre {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Timbre::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown timbre '{s}'")))
    }
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown style '{s}'")))
    }
}

impl std::fmt::Display for Timbre {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub melody: Vec<Note>,
    pub timbre: Timbre,
    pub style: Style,
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.melody.is_empty() {
            return Err(Error::arg("melody is empty"));
        }
        if let Some(n) = self
            .melody
            .iter()
            .find(|n| !(MIN_PITCH..=MAX_PITCH).contains(&n.pitch))
        {
            return Err(Error::Range(format!(
                "pitch {} outside [{MIN_PITCH}, {MAX_PITCH}]",
                n.pitch
            )));
        }
        if self.melody.iter().any(|n| !(n.duration > 0.0)) {
            return Err(Error::arg("note durations must be positive"));
        }
        let total: f64 = self.melody.iter().map(|n| n.duration).sum();
        let hop = 256.0 / self.sample_rate as f64;
        if (total - self.duration).abs() > hop {
            return Err(Error::arg(format!(
                "melody lasts {total} s but the clip is {} s",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn with_timbre(&self, timbre: Timbre) -> Self {
        Self {
            timbre,
            ..self.clone()
        }
    }

    pub fn with_style(&self, style: Style) -> Self {
        Self {
            style,
            ..self.clone()
        }
    }
}

fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

/// Renders the audio for `spec`.
pub fn render_signal(spec: &ClipSpec) -> Result<Signal> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let len = (spec.duration * sr).round() as usize;
    let mut out = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut start = 0.0;
    for (i, note) in spec.melody.iter().enumerate() {
        let f0 = midi_to_hz(note.pitch as f64);
        let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let vib_rate = 5.0 + rng.random_range(-0.5..0.5);
        let first = (start * sr).round() as usize;
        let last = (((start + note.duration) * sr).round() as usize).min(len);
        let depth = spec.style.vibrato();
        let mut phase_acc = 0.0;
        for n in first..last {
            let t = (n - first) as f64 / sr;
            let gate = spec.style.gate(i, t, note.duration);
            let freq = if depth > 0.0 {
                f0 * 2f64.powf(depth * (2.0 * PI * vib_rate * t).sin() / 12.0)
            } else {
                f0
            };
            phase_acc += 2.0 * PI * freq / sr;
            if gate == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for h in 1..=HARMONICS {
                if h as f64 * freq >= sr / 2.0 {
                    break;
                }
                let a = spec.timbre.harmonic_amplitude(h);
                if a == 0.0 {
                    continue;
                }
                acc += a * spec.timbre.envelope(t, h) * (h as f64 * phase_acc + phases[h - 1]).sin();
            }
            out[n] += gate * acc;
        }
        start += note.duration;
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= PEAK / peak);
    }
    for x in out.iter_mut() {
        *x += NOISE_FLOOR * rng.random_range(-1.0..1.0);
    }
    Signal::new(out, spec.sample_rate)
}

/// Audio and its latent under the default codec.
pub fn render_clip(spec: &ClipSpec) -> Result<(Signal, Latent)> {
    let signal = render_signal(spec)?;
    let latent = LatentCodec::default().encode(&signal)?;
    Ok((signal, latent))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Clip {
    pub id: String,
    pub spec: ClipSpec,
    pub signal: Signal,
    pub latent: Latent,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub clips: Vec<Clip>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const NOTES_PER_CLIP: usize = 8;

/// Degrees above C3 the melody walk stays within: C4 to G4. A narrow range
/// keeps the top harmonic in the same mel bands, so band energy reflects
/// timbre more than melody.
const MELODY_DEGREES: (i32, i32) = (7, 11);

/// Scale-degree random walk in C major, eight equal notes.
pub fn random_melody(rng: &mut impl Rng, duration: f64) -> Vec<Note> {
    let (lo, hi) = MELODY_DEGREES;
    let mut degree: i32 = rng.random_range(lo..=hi);
    let note_len = duration / NOTES_PER_CLIP as f64;
    (0..NOTES_PER_CLIP)
        .map(|_| {
            let step = rng.random_range(-2..=2);
            degree = (degree + step).clamp(lo, hi);
            let pitch = 48 + 12 * (degree / 7) + MAJOR[(degree % 7) as usize];
            Note {
                pitch: pitch as u8,
                duration: note_len,
            }
        })
        .collect()
}

/// `count_per_class` clips per timbre; styles rotate within each timbre.
/// Every block of eight clips per timbre puts each style once in each split.
pub fn make_corpus(count_per_class: usize, seed: u64) -> Result<Corpus> {
    let specs = corpus_specs(count_per_class, seed)?;
    let classes = Timbre::ALL.len();
    let clips = specs
        .into_iter()
        .enumerate()
        .map(|(k, spec)| {
            let (signal, latent) = render_clip(&spec)?;
            Ok(Clip {
                id: format!("clip{k:04}"),
                spec,
                signal,
                latent,
                split: split_for(k / classes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { clips })
}

/// Split of the `i`-th clip within a timbre class.
fn split_for(i: usize) -> Split {
    if (i + i / 4) % 2 == 0 {
        Split::Train
    } else {
        Split::Eval
    }
}

/// The specs [`make_corpus`] would render, without rendering them.
pub fn corpus_specs(count_per_class: usize, seed: u64) -> Result<Vec<ClipSpec>> {
    if count_per_class == 0 {
        return Err(Error::arg("corpus needs at least one clip per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(count_per_class * Timbre::ALL.len());
    for i in 0..count_per_class {
        for (ti, timbre) in Timbre::ALL.into_iter().enumerate() {
            specs.push(ClipSpec {
                melody: random_melody(&mut rng, DEFAULT_DURATION),
                timbre,
                style: Style::ALL[(i + ti) % Style::ALL.len()],
                seed: rng.random(),
                duration: DEFAULT_DURATION,
                sample_rate: DEFAULT_SAMPLE_RATE,
            });
        }
    }
    Ok(specs)
}

/// The class an edit should move a clip to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "class")]
pub enum EditTarget {
    Timbre(Timbre),
    Style(Style),
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub signal: Signal,
    pub latent: Latent,
    /// True when the target class equals the source class and the source was
    /// returned as is.
    pub unchanged: bool,
}

/// Re-renders the same melody (and seed) under the target class.
pub fn ground_truth_edit(spec: &ClipSpec, target: EditTarget) -> Result<GroundTruth> {
    let edited = match target {
        EditTarget::Timbre(t) if t != spec.timbre => Some(spec.with_timbre(t)),
        EditTarget::Style(s) if s != spec.style => Some(spec.with_style(s)),
        _ => None,
    };
    let unchanged = edited.is_none();
    let (signal, latent) = render_clip(edited.as_ref().unwrap_or(spec))?;
    Ok(GroundTruth {
        signal,
        latent,
        unchanged,
    })
}
