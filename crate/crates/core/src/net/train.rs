//! Velocity-matching training, the optimiser, and the finite-difference
//! gradient check.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::Mat;
use super::model::{Label, Net};
use super::params::jitter;
use super::tap::AttentionTap;
use crate::error::{Error, Result};
use crate::flow::{interpolate, path_velocity, Latent, Schedule};

/// One point of the velocity-matching objective.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub z0: Latent,
    pub z1: Latent,
    pub t: f64,
    pub label: Label,
}

impl Net {
    fn residual(&self, s: &FlowSample) -> Result<(Mat, super::model::Trace, super::model::Conditioning)> {
        let zt = interpolate(&s.z0, &s.z1, s.t, &Schedule::Linear)?;
        let target = path_velocity(&s.z0, &s.z1, s.t, &Schedule::Linear)?;
        let cond = self.condition(s.label)?;
        let (v, trace) = self.forward_traced(&zt, s.t, &cond, &mut AttentionTap::passthrough())?;
        Ok((v - target, trace, cond))
    }

    /// Mean squared error between the predicted and straight-path velocity.
    pub fn loss(&self, s: &FlowSample) -> Result<f64> {
        let (r, _, _) = self.residual(s)?;
        Ok(r.mapv(|x| x * x).sum() / r.len() as f64)
    }

    /// Returns the loss and adds `weight · ∂loss/∂θ` into `grad`.
    pub fn loss_and_grad(&self, s: &FlowSample, weight: f64, grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.params().len() {
            return Err(Error::dim(format!(
                "gradient buffer {} for {} parameters",
                grad.len(),
                self.params().len()
            )));
        }
        let (r, trace, cond) = self.residual(s)?;
        let n = r.len() as f64;
        let dout = &r * (2.0 * weight / n);
        self.backward(&trace, &cond, &dout, grad);
        Ok(r.mapv(|x| x * x).sum() / n)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// A data latent with its label. `z0` pins the noise endpoint; when absent a
/// fresh Gaussian draw is used each time the pair is sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub z0: Option<Latent>,
    pub z1: Latent,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of training a sample against the null label.
    pub null_prob: f64,
    pub seed: u64,
    /// Stop once the smoothed loss falls to `initial / target_ratio`.
    pub target_ratio: Option<f64>,
    /// Window of the trailing mean used for smoothing.
    pub smoothing: usize,
    /// Anneal the learning rate to zero over `steps` along a half cosine.
    pub cosine_decay: bool,
}

fn default_window() -> usize {
    50
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            null_prob: 0.1,
            seed: 0,
            target_ratio: None,
            smoothing: default_window(),
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.smoothing == 0 {
            return Err(Error::arg("batch size and smoothing window must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.null_prob) {
            return Err(Error::arg("null probability must lie in [0, 1]"));
        }
        if matches!(self.target_ratio, Some(r) if !(r > 1.0)) {
            return Err(Error::arg("target ratio must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss at every step taken.
    pub losses: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Loss of the untouched network, averaged over the first batch.
    pub initial: f64,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_smoothed(&self) -> f64 {
        self.smoothed.last().copied().unwrap_or(self.initial)
    }

    pub fn reduction(&self) -> f64 {
        self.initial / self.final_smoothed()
    }
}

/// Trailing mean over `window` points.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

fn gaussian(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Latent {
    Latent::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Trains `net` in place. Per-item gradients are summed in batch order, so a
/// run is bitwise reproducible from `cfg.seed`.
pub fn train(net: &mut Net, data: &[TrainPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let shape = net.latent_shape();
    for p in data {
        if p.z1.dim() != shape || p.z0.as_ref().is_some_and(|z| z.dim() != shape) {
            return Err(Error::dim(format!("training latent does not match {shape:?}")));
        }
        net.condition(p.label)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.params().len(), cfg.learning_rate);
    let mut grad = vec![0.0; net.params().len()];
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut smoothed = Vec::with_capacity(cfg.steps);
    let mut initial = f64::NAN;
    let weight = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        grad.fill(0.0);
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let pair = data.choose(&mut rng).expect("nonempty");
            let z0 = match &pair.z0 {
                Some(z) => z.clone(),
                None => gaussian(shape, &mut rng),
            };
            let t: f64 = rng.random();
            let label = if rng.random::<f64>() < cfg.null_prob {
                Label::Null
            } else {
                pair.label
            };
            let sample = FlowSample {
                z0,
                z1: pair.z1.clone(),
                t,
                label,
            };
            total += match net.loss_and_grad(&sample, weight, &mut grad) {
                Ok(l) => l,
                Err(Error::Numeric { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
        }
        let loss = total * weight;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        if step == 0 {
            initial = loss;
        }
        losses.push(loss);
        let w = cfg.smoothing.min(losses.len());
        smoothed.push(losses[losses.len() - w..].iter().sum::<f64>() / w as f64);
        if cfg.cosine_decay {
            let progress = step as f64 / cfg.steps as f64;
            adam.learning_rate = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        adam.update(net.params_mut(), &grad);
        if let Some(r) = cfg.target_ratio {
            if losses.len() >= cfg.smoothing && smoothed[step] * r <= initial {
                break;
            }
        }
    }
    Ok(TrainReport {
        steps: losses.len(),
        losses,
        smoothed,
        initial,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// `(index, analytic, numeric)` for every probed coordinate.
    pub probes: Vec<(usize, f64, f64)>,
}

/// Below this magnitude, gradient entries are compared absolutely. Central
/// differences at ε = 1e-5 carry round-off near 1e-11 for unit-scale losses,
/// which swamps the relative error of coordinates much smaller than this.
const GRAD_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of `sample`'s loss with central finite
/// differences at `coordinates` random parameter indices.
pub fn gradient_check(net: &Net, sample: &FlowSample, coordinates: usize, epsilon: f64, seed: u64) -> Result<GradCheck> {
    let mut grad = vec![0.0; net.params().len()];
    net.loss_and_grad(sample, 1.0, &mut grad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, grad.len(), coordinates.min(grad.len()));
    let mut probe = net.clone();
    let mut probes = Vec::with_capacity(idx.len());
    let mut worst = 0.0f64;
    for i in idx.into_iter() {
        let base = probe.params()[i];
        probe.params_mut()[i] = base + epsilon;
        let up = probe.loss(sample)?;
        probe.params_mut()[i] = base - epsilon;
        let down = probe.loss(sample)?;
        probe.params_mut()[i] = base;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = grad[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((grad[i] - numeric).abs() / scale);
        probes.push((i, grad[i], numeric));
    }
    Ok(GradCheck {
        max_relative_error: worst,
        coordinates: probes.len(),
        probes,
    })
}

/// A network whose every parameter, including the zero-initialised
/// modulation and head weights, has been perturbed, so that no gradient path
/// is trivially dead.
pub fn jittered(net: &Net, scale: f64, seed: u64) -> Net {
    let mut out = net.clone();
    jitter(out.params_mut(), scale, seed);
    out
}
