//! Flat parameter storage and its layout.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub model_dim: usize,
    pub head_count: usize,
    pub double_blocks: usize,
    pub single_blocks: usize,
    pub audio_tokens: usize,
    pub latent_channels: usize,
    /// One token per label part: timbre, then style.
    pub text_tokens: usize,
    pub timbre_classes: usize,
    pub style_classes: usize,
    /// Hidden width of every MLP as a multiple of `model_dim`.
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            head_count: 4,
            double_blocks: 2,
            single_blocks: 4,
            audio_tokens: 64,
            latent_channels: 64,
            text_tokens: 2,
            timbre_classes: 4,
            style_classes: 4,
            mlp_ratio: 2,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::arg(format!("invalid network config: {m}")));
        if self.model_dim == 0 || self.head_count == 0 || self.model_dim % self.head_count != 0 {
            return fail("model_dim must be a positive multiple of head_count");
        }
        if self.model_dim % 2 != 0 {
            return fail("model_dim must be even for sinusoidal features");
        }
        if self.double_blocks == 0 || self.single_blocks == 0 {
            return fail("need at least one double and one single block");
        }
        if self.audio_tokens == 0 || self.latent_channels == 0 || self.mlp_ratio == 0 {
            return fail("token count, channel count and mlp_ratio must be positive");
        }
        if self.text_tokens != 2 {
            return fail("text_tokens must be 2 (timbre and style)");
        }
        if self.timbre_classes == 0 || self.style_classes == 0 {
            return fail("label vocabularies must be nonempty");
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.mlp_ratio * self.model_dim
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.head_count
    }

    /// Total sequence length seen by joint attention.
    pub fn sequence(&self) -> usize {
        self.text_tokens + self.audio_tokens
    }
}

/// A matrix inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).expect("slot in bounds")
    }

    pub fn mat_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.range()]).expect("slot in bounds")
    }

    pub fn vec<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.range()])
    }

    pub fn vec_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.range()])
    }

    /// Row `r` as a vector.
    pub fn row<'a>(&self, p: &'a [f64], r: usize) -> ArrayView1<'a, f64> {
        let start = self.offset + r * self.cols;
        ArrayView1::from(&p[start..start + self.cols])
    }

    pub fn row_mut<'a>(&self, p: &'a mut [f64], r: usize) -> ArrayViewMut1<'a, f64> {
        let start = self.offset + r * self.cols;
        ArrayViewMut1::from(&mut p[start..start + self.cols])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    /// `in × out`.
    pub w: Slot,
    /// `1 × out`.
    pub b: Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamParams {
    /// Six modulation vectors: shift, scale, gate for attention then MLP.
    pub modulation: Linear,
    pub qkv: Linear,
    pub proj: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DoubleParams {
    pub audio: StreamParams,
    pub text: StreamParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SingleParams {
    /// Shift, scale, gate.
    pub modulation: Linear,
    /// Fused projection to Q, K, V and the MLP input.
    pub lin1: Linear,
    /// Fused projection from attention output and MLP activation.
    pub lin2: Linear,
}

/// Where every tensor lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub input: Linear,
    pub time1: Linear,
    pub time2: Linear,
    pub timbre_embed: Slot,
    pub style_embed: Slot,
    pub null_text: Slot,
    pub double: Vec<DoubleParams>,
    pub single: Vec<SingleParams>,
    pub final_modulation: Linear,
    pub head: Linear,
    pub total: usize,
}

struct Builder {
    next: usize,
}

impl Builder {
    fn slot(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        s
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.slot(fan_in, fan_out),
            b: self.slot(1, fan_out),
        }
    }

    fn stream(&mut self, d: usize, hidden: usize) -> StreamParams {
        StreamParams {
            modulation: self.linear(d, 6 * d),
            qkv: self.linear(d, 3 * d),
            proj: self.linear(d, d),
            fc1: self.linear(d, hidden),
            fc2: self.linear(hidden, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        let d = cfg.model_dim;
        let h = cfg.hidden();
        let mut b = Builder { next: 0 };
        let input = b.linear(cfg.latent_channels, d);
        let time1 = b.linear(d, d);
        let time2 = b.linear(d, d);
        let timbre_embed = b.slot(cfg.timbre_classes, d);
        let style_embed = b.slot(cfg.style_classes, d);
        let null_text = b.slot(cfg.text_tokens, d);
        let double = (0..cfg.double_blocks)
            .map(|_| DoubleParams {
                audio: b.stream(d, h),
                text: b.stream(d, h),
            })
            .collect();
        let single = (0..cfg.single_blocks)
            .map(|_| SingleParams {
                modulation: b.linear(d, 3 * d),
                lin1: b.linear(d, 3 * d + h),
                lin2: b.linear(d + h, d),
            })
            .collect();
        let final_modulation = b.linear(d, 2 * d);
        let head = b.linear(d, cfg.latent_channels);
        Self {
            input,
            time1,
            time2,
            timbre_embed,
            style_embed,
            null_text,
            double,
            single,
            final_modulation,
            head,
            total: b.next,
        }
    }

    fn modulations(&self) -> Vec<Linear> {
        let mut v = vec![self.final_modulation];
        for blk in &self.double {
            v.push(blk.audio.modulation);
            v.push(blk.text.modulation);
        }
        v.extend(self.single.iter().map(|s| s.modulation));
        v
    }

    fn linears(&self) -> Vec<Linear> {
        let mut v = vec![self.input, self.time1, self.time2];
        for blk in &self.double {
            for s in [&blk.audio, &blk.text] {
                v.extend([s.qkv, s.proj, s.fc1, s.fc2]);
            }
        }
        for s in &self.single {
            v.extend([s.lin1, s.lin2]);
        }
        v
    }
}

/// Closed-form parameter count for `cfg`.
pub fn parameter_count(cfg: &NetConfig) -> usize {
    let d = cfg.model_dim;
    let h = cfg.hidden();
    let lin = |i: usize, o: usize| i * o + o;
    let stream = lin(d, 6 * d) + lin(d, 3 * d) + lin(d, d) + lin(d, h) + lin(h, d);
    let single = lin(d, 3 * d) + lin(d, 3 * d + h) + lin(d + h, d);
    lin(cfg.latent_channels, d)
        + 2 * lin(d, d)
        + (cfg.timbre_classes + cfg.style_classes + cfg.text_tokens) * d
        + cfg.double_blocks * 2 * stream
        + cfg.single_blocks * single
        + lin(d, 2 * d)
        + lin(d, cfg.latent_channels)
}

/// Seeded initialisation.
///
/// Weights are Gaussian with variance `1 / fan_in`, biases zero, label
/// embeddings unit Gaussian. Modulation layers and the output head start at
/// zero, so every block begins as the identity and the initial velocity is 0.
pub fn init_params(cfg: &NetConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut p = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for l in layout.linears() {
        let normal = Normal::new(0.0, 1.0 / (l.w.rows as f64).sqrt()).expect("positive std");
        for x in &mut p[l.w.range()] {
            *x = normal.sample(&mut rng);
        }
    }
    let unit = Normal::new(0.0, 1.0).expect("positive std");
    for s in [layout.timbre_embed, layout.style_embed, layout.null_text] {
        for x in &mut p[s.range()] {
            *x = unit.sample(&mut rng);
        }
    }
    debug_assert!(layout
        .modulations()
        .iter()
        .all(|m| p[m.w.range()].iter().all(|&x| x == 0.0)));
    Ok(p)
}

/// Adds seeded Gaussian noise of standard deviation `scale` to every
/// parameter, including the zero-initialised ones.
pub fn jitter(params: &mut [f64], scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).expect("non-negative std");
    for x in params.iter_mut() {
        *x += normal.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_layout_and_hand_arithmetic() {
        let cfg = NetConfig::default();
        assert_eq!(Layout::new(&cfg).total, parameter_count(&cfg));
        // d = 64, hidden = 128, by hand:
        // stream = 24960 + 12480 + 4160 + 8320 + 8256 = 58176
        // single = 12480 + 20800 + 12352 = 45632
        // rest   = 4160 + 8320 + 640 + 8320 + 4160 = 25600
        assert_eq!(parameter_count(&cfg), 2 * 2 * 58176 + 4 * 45632 + 25600);
    }

    #[test]
    fn slots_tile_the_vector() {
        let cfg = NetConfig {
            double_blocks: 1,
            single_blocks: 2,
            ..NetConfig::default()
        };
        let l = Layout::new(&cfg);
        let mut slots = vec![l.input.w, l.input.b, l.head.w, l.head.b, l.timbre_embed];
        for s in &l.single {
            slots.extend([s.lin1.w, s.lin1.b, s.lin2.w, s.lin2.b]);
        }
        slots.sort_by_key(|s| s.offset);
        for w in slots.windows(2) {
            assert!(w[0].offset + w[0].len() <= w[1].offset);
        }
        assert_eq!(l.head.b.offset + l.head.b.len(), l.total);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = NetConfig::default();
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = NetConfig { seed: 1, ..cfg };
        assert_ne!(init_params(&cfg).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn head_starts_at_zero() {
        let cfg = NetConfig::default();
        let l = Layout::new(&cfg);
        let p = init_params(&cfg).unwrap();
        assert!(p[l.head.w.range()].iter().all(|&x| x == 0.0));
        assert!(p[l.input.w.range()].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            NetConfig { model_dim: 66, ..NetConfig::default() },
            NetConfig { single_blocks: 0, ..NetConfig::default() },
            NetConfig { double_blocks: 0, ..NetConfig::default() },
            NetConfig { head_count: 0, ..NetConfig::default() },
            NetConfig { text_tokens: 3, ..NetConfig::default() },
        ] {
            assert!(init_params(&cfg).is_err(), "{cfg:?}");
        }
    }
}
