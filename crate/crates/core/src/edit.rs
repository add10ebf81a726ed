//! Zero-shot editing: guided inversion that caches single-block attention
//! tensors, then guided denoising under a new label with those tensors
//! injected back.
//!
//! Inversion step `k` covers `t ∈ [(N−k−1)/N, (N−k)/N]`; denoising step `j`
//! covers `[j/N, (j+1)/N]`. The two refer to the same interval when
//! `k = N − 1 − j`. The cache holds the final `n` inversion steps, so
//! injection happens during the first `n` denoising steps.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::latent::LatentCodec;
use crate::metrics::{alignment, chroma_similarity, spearman};
use crate::flow::{all_finite, Direction, FlowState, Latent, TimeGrid, VelocityField};
use crate::net::{AttentionTap, Conditioning, Label, Net, QkvEntry, SlotKey, Strategy};
use crate::solver::{self, Order, SolverConfig};
use crate::synth::{Style, Timbre};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Integration steps `N`, shared by inversion and denoising.
    pub steps: usize,
    /// Guidance scale while inverting.
    pub source_cfg: f64,
    /// Guidance scale while denoising.
    pub target_cfg: f64,
    pub strategy: Strategy,
    /// `n`: how many final inversion steps are cached and replayed.
    pub injection_steps: usize,
    /// `m`: single blocks numbered `m` and above are cached and replaced.
    pub injection_block: usize,
    pub solver: Order,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            source_cfg: 1.0,
            target_cfg: 20.0,
            strategy: Strategy::Kv,
            injection_steps: 25,
            injection_block: 1,
            solver: Order::Rf2,
        }
    }
}

impl EditConfig {
    pub fn validate(&self, single_blocks: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("edit needs at least one step"));
        }
        if self.injection_steps > self.steps {
            return Err(Error::arg(format!(
                "injection steps {} exceed step count {}",
                self.injection_steps, self.steps
            )));
        }
        if self.strategy != Strategy::None && !(1..=single_blocks).contains(&self.injection_block) {
            return Err(Error::arg(format!(
                "injection block {} outside 1..={single_blocks}",
                self.injection_block
            )));
        }
        if !self.source_cfg.is_finite() || !self.target_cfg.is_finite() {
            return Err(Error::arg("guidance scales must be finite"));
        }
        Ok(())
    }

    fn solver_config(&self) -> SolverConfig {
        SolverConfig::with_order(self.solver)
    }

    /// Whether anything is cached at all. With no injection strategy an
    /// out-of-range block start simply disables recording.
    fn records(&self, single_blocks: usize) -> bool {
        (1..=single_blocks).contains(&self.injection_block)
    }
}

/// Inversion step matching denoising step `j` of `n_steps`. The map is its
/// own inverse.
pub fn correspondence(j: usize, n_steps: usize) -> Result<usize> {
    if j >= n_steps {
        return Err(Error::Range(format!("step {j} outside 0..{n_steps}")));
    }
    Ok(n_steps - 1 - j)
}

/// `v_u + s (v_c − v_u)`. At `s = 1` this is exactly `v_c` and at `s = 0`
/// exactly `v_u`.
pub fn combine_guidance(v_cond: &Latent, v_uncond: &Latent, scale: f64) -> Latent {
    if scale == 0.0 {
        return v_uncond.clone();
    }
    let mut out = v_cond - v_uncond;
    out.zip_mut_with(v_uncond, |d, &u| *d = u + scale * *d);
    out
}

/// Classifier-free guided velocity. The conditional branch is evaluated
/// first; the unconditional one is skipped when `scale == 1`.
pub fn guided_velocity<F: VelocityField>(
    field: &F,
    z: &Latent,
    t: f64,
    cond: &F::Cond,
    null_cond: &F::Cond,
    scale: f64,
) -> Result<Latent> {
    let v_cond = field.velocity(z, t, cond)?;
    if scale == 1.0 {
        return Ok(v_cond);
    }
    let v_uncond = field.velocity(z, t, null_cond)?;
    Ok(combine_guidance(&v_cond, &v_uncond, scale))
}

/// Cached K/V (and Q) tensors keyed by `(inversion step, single block)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache {
    entries: BTreeMap<SlotKey, QkvEntry>,
    steps: usize,
    injection_steps: usize,
    injection_block: usize,
    single_blocks: usize,
}

impl AttentionCache {
    /// `n × (S − m + 1)`, or zero when `m` is outside `1..=S`.
    pub fn expected_len(injection_steps: usize, injection_block: usize, single_blocks: usize) -> usize {
        if (1..=single_blocks).contains(&injection_block) {
            injection_steps * (single_blocks + 1 - injection_block)
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<SlotKey, QkvEntry> {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = SlotKey> + '_ {
        self.entries.keys().copied()
    }

    pub fn injection_steps(&self) -> usize {
        self.injection_steps
    }

    pub fn injection_block(&self) -> usize {
        self.injection_block
    }

    /// Checks the count invariant and that every tensor is finite.
    pub fn check(&self) -> Result<()> {
        let expected = Self::expected_len(self.injection_steps, self.injection_block, self.single_blocks);
        if self.entries.len() != expected {
            return Err(Error::arg(format!(
                "cache holds {} entries, expected {expected}",
                self.entries.len()
            )));
        }
        let first = self.steps - self.injection_steps;
        for (&(k, b), e) in &self.entries {
            if k < first || k >= self.steps || b < self.injection_block || b > self.single_blocks {
                return Err(Error::arg(format!("cache slot ({k}, {b}) outside its window")));
            }
            if !(all_finite(&e.k) && all_finite(&e.v) && all_finite(&e.q)) {
                return Err(Error::Numeric { step: k });
            }
        }
        Ok(())
    }

    /// The sub-cache a run with smaller `n` and larger `m` would have
    /// recorded. Recording never perturbs inversion, so this equals a fresh
    /// inversion with those settings.
    pub fn restrict(&self, injection_steps: usize, injection_block: usize) -> Result<Self> {
        if injection_steps > self.injection_steps || injection_block < self.injection_block {
            return Err(Error::arg(format!(
                "cannot widen cache (n={}, m={}) to (n={injection_steps}, m={injection_block})",
                self.injection_steps, self.injection_block
            )));
        }
        let first = self.steps - injection_steps;
        let entries = self
            .entries
            .iter()
            .filter(|(&(k, b), _)| k >= first && b >= injection_block)
            .map(|(&key, e)| (key, e.clone()))
            .collect();
        Ok(Self {
            entries,
            steps: self.steps,
            injection_steps,
            injection_block,
            single_blocks: self.single_blocks,
        })
    }

    fn matches(&self, cfg: &EditConfig) -> Result<()> {
        if self.steps != cfg.steps
            || self.injection_steps != cfg.injection_steps
            || self.injection_block != cfg.injection_block
        {
            return Err(Error::arg(format!(
                "cache was recorded for N={}, n={}, m={} but the edit asks for N={}, n={}, m={}",
                self.steps,
                self.injection_steps,
                self.injection_block,
                cfg.steps,
                cfg.injection_steps,
                cfg.injection_block
            )));
        }
        self.check()
    }
}

/// What the field does with attention during the current step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StepMode {
    Plain,
    /// Record the step's first conditional evaluation.
    Record(usize),
    /// Replace during every evaluation of the step, under this cache step.
    Inject(usize),
}

/// The network seen by the solver: guidance plus step-aware tapping.
struct EditField<'a> {
    net: &'a Net,
    null: Conditioning,
    scale: f64,
    strategy: Strategy,
    min_block: usize,
    cache: Option<&'a BTreeMap<SlotKey, QkvEntry>>,
    mode: Cell<StepMode>,
    first_in_step: Cell<bool>,
    recorded: RefCell<BTreeMap<SlotKey, QkvEntry>>,
    step_norm: Cell<Option<f64>>,
    cond_evals: Cell<usize>,
    uncond_evals: Cell<usize>,
}

impl<'a> EditField<'a> {
    fn new(net: &'a Net, scale: f64, strategy: Strategy, min_block: usize) -> Self {
        Self {
            net,
            null: net.null_condition(),
            scale,
            strategy,
            min_block,
            cache: None,
            mode: Cell::new(StepMode::Plain),
            first_in_step: Cell::new(true),
            recorded: RefCell::new(BTreeMap::new()),
            step_norm: Cell::new(None),
            cond_evals: Cell::new(0),
            uncond_evals: Cell::new(0),
        }
    }

    fn begin_step(&self, mode: StepMode) {
        self.mode.set(mode);
        self.first_in_step.set(true);
        self.step_norm.set(None);
    }

    fn branch(&self, z: &Latent, t: f64, cond: &Conditioning, primary: bool) -> Result<Latent> {
        let counter = if primary { &self.cond_evals } else { &self.uncond_evals };
        counter.set(counter.get() + 1);
        match self.mode.get() {
            StepMode::Record(k) if primary && self.first_in_step.get() => {
                let mut tap = AttentionTap::record(self.min_block).at_step(k);
                let v = self.net.forward(z, t, cond, &mut tap)?;
                self.recorded.borrow_mut().extend(tap.into_recorded());
                Ok(v)
            }
            StepMode::Inject(k) => {
                let cache = self.cache.ok_or(Error::CacheMiss {
                    step: k,
                    block: self.min_block,
                })?;
                let mut tap = AttentionTap::replace(self.strategy, cache, self.min_block).at_step(k);
                self.net.forward(z, t, cond, &mut tap)
            }
            _ => self.net.forward(z, t, cond, &mut AttentionTap::passthrough()),
        }
    }
}

impl VelocityField for EditField<'_> {
    type Cond = Conditioning;

    fn velocity(&self, z: &Latent, t: f64, cond: &Conditioning) -> Result<Latent> {
        let v_cond = self.branch(z, t, cond, true)?;
        let v = if self.scale == 1.0 {
            v_cond
        } else {
            let v_uncond = self.branch(z, t, &self.null, false)?;
            combine_guidance(&v_cond, &v_uncond, self.scale)
        };
        if self.first_in_step.replace(false) {
            self.step_norm.set(Some(v.mapv(|x| x * x).sum().sqrt()));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub step: usize,
    pub t: f64,
    /// Norm of the guided velocity at the start of the step.
    pub velocity_norm: f64,
    /// Cache step replayed during this step, if any.
    pub injected_from: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct InversionOutput {
    pub noise: Latent,
    pub cache: AttentionCache,
    pub trajectory: Vec<FlowState>,
    pub diagnostics: Vec<StepDiagnostic>,
    pub conditional_evaluations: usize,
    pub unconditional_evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct EditResult {
    pub edited_latent: Latent,
    pub noise_latent: Latent,
    pub diagnostics: Vec<StepDiagnostic>,
    pub config: EditConfig,
    pub conditional_evaluations: usize,
    pub unconditional_evaluations: usize,
}

fn run(
    field: &EditField,
    start: FlowState,
    grid: &TimeGrid,
    cfg: &EditConfig,
    mode_for: impl Fn(usize) -> StepMode,
    cond: &Conditioning,
) -> Result<(Vec<FlowState>, Vec<StepDiagnostic>)> {
    let solver_cfg = cfg.solver_config();
    let mut trajectory = vec![start];
    let mut diagnostics = Vec::with_capacity(grid.steps());
    for (i, w) in grid.times().windows(2).enumerate() {
        let mode = mode_for(i);
        field.begin_step(mode);
        let current = trajectory.last().expect("nonempty");
        let mut next = match solver::step(field, current, w[1] - w[0], &solver_cfg, cond) {
            Err(Error::Numeric { .. }) => return Err(Error::Numeric { step: i }),
            other => other?,
        };
        if !all_finite(&next.z) {
            return Err(Error::Numeric { step: i });
        }
        next.t = w[1];
        diagnostics.push(StepDiagnostic {
            step: i,
            t: w[0],
            velocity_norm: field.step_norm.get().unwrap_or(0.0),
            injected_from: match mode {
                StepMode::Inject(k) => Some(k),
                _ => None,
            },
        });
        trajectory.push(next);
    }
    Ok((trajectory, diagnostics))
}

/// Inverts `source` from `t = 1` to `t = 0` under guidance `cfg.source_cfg`,
/// caching attention tensors of blocks `≥ m` over the final `n` steps.
pub fn invert_and_cache(net: &Net, source: &Latent, source_cond: &Conditioning, cfg: &EditConfig) -> Result<InversionOutput> {
    let single = net.config().single_blocks;
    cfg.validate(single)?;
    let grid = TimeGrid::uniform(cfg.steps, Direction::Reverse)?;
    let field = EditField::new(net, cfg.source_cfg, cfg.strategy, cfg.injection_block);
    let first_cached = cfg.steps - cfg.injection_steps;
    let records = cfg.records(single);
    let start = FlowState::new(source.clone(), 1.0)?;
    let (trajectory, diagnostics) = run(
        &field,
        start,
        &grid,
        cfg,
        |k| {
            if records && k >= first_cached {
                StepMode::Record(k)
            } else {
                StepMode::Plain
            }
        },
        source_cond,
    )?;
    let cache = AttentionCache {
        entries: field.recorded.into_inner(),
        steps: cfg.steps,
        injection_steps: cfg.injection_steps,
        injection_block: cfg.injection_block,
        single_blocks: single,
    };
    cache.check()?;
    Ok(InversionOutput {
        noise: trajectory.last().expect("nonempty").z.clone(),
        trajectory,
        diagnostics,
        conditional_evaluations: field.cond_evals.get(),
        unconditional_evaluations: field.uncond_evals.get(),
        cache,
    })
}

/// Denoises `noise` from `t = 0` to `t = 1` under `target_cond` with guidance
/// `cfg.target_cfg`, replaying the cache per `cfg.strategy` in the first `n`
/// steps. Injection applies to both guidance branches.
pub fn edit(net: &Net, noise: &Latent, cache: &AttentionCache, target_cond: &Conditioning, cfg: &EditConfig) -> Result<EditResult> {
    let single = net.config().single_blocks;
    cfg.validate(single)?;
    cache.matches(cfg)?;
    let grid = TimeGrid::uniform(cfg.steps, Direction::Forward)?;
    let mut field = EditField::new(net, cfg.target_cfg, cfg.strategy, cfg.injection_block);
    field.cache = Some(cache.entries());
    let inject = cfg.strategy != Strategy::None;
    let start = FlowState::new(noise.clone(), 0.0)?;
    let (trajectory, diagnostics) = run(
        &field,
        start,
        &grid,
        cfg,
        |j| {
            if inject && j < cfg.injection_steps {
                StepMode::Inject(cfg.steps - 1 - j)
            } else {
                StepMode::Plain
            }
        },
        target_cond,
    )?;
    Ok(EditResult {
        edited_latent: trajectory.last().expect("nonempty").z.clone(),
        noise_latent: noise.clone(),
        diagnostics,
        config: cfg.clone(),
        conditional_evaluations: field.cond_evals.get(),
        unconditional_evaluations: field.uncond_evals.get(),
    })
}

/// Inversion under `source` followed by an edit toward `target`.
pub fn edit_latent(net: &Net, source: &Latent, source_label: Label, target_label: Label, cfg: &EditConfig) -> Result<EditResult> {
    let inversion = invert_and_cache(net, source, &net.condition(source_label)?, cfg)?;
    edit(net, &inversion.noise, &inversion.cache, &net.condition(target_label)?, cfg)
}

/// One source clip of a sweep and the label it is edited toward.
#[derive(Clone, Debug)]
pub struct SweepClip {
    pub id: String,
    pub latent: Latent,
    /// Reference audio for fidelity; decode `latent` so that it passes
    /// through the same codec as the edit.
    pub signal: Signal,
    pub source: Label,
    pub target: Label,
}

/// Turns edited latents into fidelity and transferability scores.
#[derive(Clone, Debug)]
pub struct Scorer {
    pub codec: LatentCodec,
    pub seconds: f64,
    /// Embedding prototype per conditioning label.
    pub prototypes: BTreeMap<Label, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditScore {
    /// Chroma similarity between source and edited audio.
    pub fidelity: f64,
    /// Alignment of the edited audio with the target prototype.
    pub transferability: f64,
}

impl Scorer {
    pub fn decode(&self, latent: &Latent) -> Result<Signal> {
        self.codec.decode(latent, self.seconds)
    }

    pub fn score(&self, source: &Signal, edited: &Latent, target: Label) -> Result<EditScore> {
        let proto = self
            .prototypes
            .get(&target)
            .ok_or_else(|| Error::arg(format!("no prototype for {target:?}")))?;
        let audio = self.decode(edited)?;
        Ok(EditScore {
            fidelity: chroma_similarity(source, &audio)?,
            transferability: alignment(&audio, proto)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub injection_steps: usize,
    pub injection_block: usize,
    pub fidelity: f64,
    pub transferability: f64,
    pub clips: usize,
}

pub const SWEEP_HEADER: [&str; 6] = [
    "strategy",
    "injection_steps",
    "injection_block",
    "fidelity",
    "transferability",
    "clips",
];

/// Mean scores for every `(n, m)` cell. Each clip is inverted once with the
/// widest window and the cache is restricted per cell.
pub fn sweep(
    net: &Net,
    clips: &[SweepClip],
    n_values: &[usize],
    m_values: &[usize],
    strategy: Strategy,
    base: &EditConfig,
    scorer: &Scorer,
) -> Result<Vec<SweepRow>> {
    if clips.is_empty() || n_values.is_empty() || m_values.is_empty() {
        return Err(Error::arg("sweep needs clips and nonempty grids"));
    }
    let widest = EditConfig {
        strategy,
        injection_steps: *n_values.iter().max().expect("nonempty"),
        injection_block: *m_values.iter().min().expect("nonempty"),
        ..base.clone()
    };
    let cells: Vec<EditConfig> = n_values
        .iter()
        .flat_map(|&n| {
            m_values.iter().map(move |&m| EditConfig {
                injection_steps: n,
                injection_block: m,
                ..widest
            })
        })
        .collect();
    for c in &cells {
        c.validate(net.config().single_blocks)?;
    }
    let mut sums = vec![(0.0, 0.0); cells.len()];
    for clip in clips {
        let inversion = invert_and_cache(net, &clip.latent, &net.condition(clip.source)?, &widest)?;
        let target = net.condition(clip.target)?;
        for (cell, sum) in cells.iter().zip(sums.iter_mut()) {
            let cache = inversion.cache.restrict(cell.injection_steps, cell.injection_block)?;
            let out = edit(net, &inversion.noise, &cache, &target, cell)?;
            let s = scorer.score(&clip.signal, &out.edited_latent, clip.target)?;
            sum.0 += s.fidelity;
            sum.1 += s.transferability;
        }
    }
    let k = clips.len() as f64;
    Ok(cells
        .iter()
        .zip(sums)
        .map(|(c, (f, t))| SweepRow {
            strategy,
            injection_steps: c.injection_steps,
            injection_block: c.injection_block,
            fidelity: f / k,
            transferability: t / k,
            clips: clips.len(),
        })
        .collect())
}

/// Which sweep axis a trend is measured along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    InjectionSteps,
    InjectionBlock,
}

/// Spearman correlation between the chosen axis and `metric`, computed at
/// each fixed value of the other axis and averaged over those slices.
/// Slices whose metric is constant are skipped.
pub fn sweep_trend(rows: &[SweepRow], axis: SweepAxis, metric: impl Fn(&SweepRow) -> f64) -> Result<f64> {
    let mut slices: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let (other, x) = match axis {
            SweepAxis::InjectionSteps => (r.injection_block, r.injection_steps),
            SweepAxis::InjectionBlock => (r.injection_steps, r.injection_block),
        };
        slices.entry(other).or_default().push((x as f64, metric(r)));
    }
    let mut rhos = Vec::new();
    for pts in slices.values().filter(|p| p.len() >= 2) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        match spearman(&xs, &ys) {
            Ok(r) => rhos.push(r),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if rhos.is_empty() {
        return Err(Error::UndefinedMetric("no slice with two distinct points".into()));
    }
    Ok(rhos.iter().sum::<f64>() / rhos.len() as f64)
}

pub fn write_sweep_rows<W: Write>(sink: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.name().to_string(),
            r.injection_steps.to_string(),
            r.injection_block.to_string(),
            format!("{:.6}", r.fidelity),
            format!("{:.6}", r.transferability),
            r.clips.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A conditioning label in corpus vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLabel {
    pub timbre: Timbre,
    pub style: Style,
}

impl From<ClassLabel> for Label {
    fn from(c: ClassLabel) -> Self {
        Label::Class {
            timbre: c.timbre.index(),
            style: c.style.index(),
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.timbre, self.style)
    }
}

/// Everything needed to rerun one edit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditManifest {
    pub source_file: String,
    pub source_label: ClassLabel,
    pub target_label: ClassLabel,
    pub steps: usize,
    pub source_cfg: f64,
    pub target_cfg: f64,
    pub strategy: Strategy,
    pub injection_steps: usize,
    pub injection_block: usize,
    pub solver: Order,
    pub seed: u64,
}

impl EditManifest {
    pub fn config(&self) -> EditConfig {
        EditConfig {
            steps: self.steps,
            source_cfg: self.source_cfg,
            target_cfg: self.target_cfg,
            strategy: self.strategy,
            injection_steps: self.injection_steps,
            injection_block: self.injection_block,
            solver: self.solver,
        }
    }
}

pub const EDIT_RESULT_HEADER: [&str; 9] = [
    "source_file",
    "source_label",
    "target_label",
    "strategy",
    "injection_steps",
    "injection_block",
    "fidelity",
    "transferability",
    "output_file",
];

/// Appends one result row, writing the header first if the file is new.
pub fn append_edit_result(
    path: impl AsRef<Path>,
    manifest: &EditManifest,
    score: &EditScore,
    output_file: &str,
) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(EDIT_RESULT_HEADER)?;
    }
    w.write_record([
        manifest.source_file.clone(),
        manifest.source_label.to_string(),
        manifest.target_label.to_string(),
        manifest.strategy.name().to_string(),
        manifest.injection_steps.to_string(),
        manifest.injection_block.to_string(),
        format!("{:.6}", score.fidelity),
        format!("{:.6}", score.transferability),
        output_file.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
