//! Command-line front end. Parsing and dispatch live here so that tests can
//! drive commands in-process; the binary only maps errors to exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dsp::wav::wav_write;
use crate::edit::{
    append_edit_result, edit_latent, sweep, write_sweep_rows, ClassLabel, EditConfig, EditManifest,
};
use crate::error::{Error, Result};
use crate::experiment::{class_of, decoded, decoded_prototypes, label_of, next_timbre, prototypes, scorer, transfer_jobs};
use crate::flow::{Direction, TimeGrid};
use crate::latent::{write_latent, LatentCodec};
use crate::metrics::{
    append_metric_rows, embed_toy, frechet_distance, gaussian_stats, write_metric_rows, MetricReport,
    MetricRow,
};
use crate::net::{read_checkpoint, train, write_checkpoint, Net, NetConfig, Strategy, TrainConfig, TrainPair};
use crate::solver::{reconstruct, Order, SolverConfig};
use crate::store::{read_corpus, read_manifest, write_corpus};
use crate::synth::{ground_truth_edit, make_corpus, Clip, Corpus, EditTarget, Split, Style, Timbre, DEFAULT_DURATION};

/// Exit status for success, bad usage, bad data or files, numeric failure.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Range(_) => EXIT_USAGE,
        Error::Numeric { .. } | Error::Training { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusOptions {
    /// Clips per timbre.
    pub count: usize,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self { count: 10, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub strategy: Strategy,
    /// Eval clips used; 0 means all.
    pub clips: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n_grid: vec![3, 8, 15, 25],
            m_grid: vec![1, 2, 3, 4],
            strategy: Strategy::V,
            clips: 20,
        }
    }
}

/// Defaults for every command, optionally loaded from JSON. Unknown keys are
/// rejected; command-line flags override whatever the file sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusOptions,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub sweep: SweepOptions,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::arg(format!("config: {e}")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "rfedit", version, about = "Rectified-flow inversion and attention-injection editing on a toy corpus")]
pub struct Cli {
    /// JSON file with defaults for every command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus to a directory.
    GenCorpus(GenCorpusArgs),
    /// Train the velocity network on a corpus directory.
    Train(TrainArgs),
    /// Invert and regenerate one clip with both solvers.
    Reconstruct(ReconstructArgs),
    /// Edit one clip toward a target class.
    Edit(EditArgs),
    /// Injection-window sweep over (n, m).
    Sweep(SweepArgs),
    /// Compare two aligned corpora.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Clips per timbre.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Render every clip re-voiced with the next timbre instead.
    #[arg(long)]
    pub transfer: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop early once the smoothed loss has fallen by this factor.
    #[arg(long)]
    pub target_ratio: Option<f64>,
    /// Loss curve CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub steps: Option<usize>,
    /// euler, rf2, or both.
    #[arg(long, default_value = "both")]
    pub solver: String,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub clip: String,
    /// Defaults to the next timbre after the source's.
    #[arg(long)]
    pub target_timbre: Option<Timbre>,
    /// Defaults to the source style.
    #[arg(long)]
    pub target_style: Option<Style>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub injection_steps: Option<usize>,
    #[arg(long)]
    pub injection_block: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub source_cfg: Option<f64>,
    #[arg(long)]
    pub target_cfg: Option<f64>,
    #[arg(long)]
    pub solver: Option<Order>,
    /// Edited latent file; a `.json` manifest and `.wav` render are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Metric CSV to append to.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Edit-result CSV to append to.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub m_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl clap::ValueEnum for Strategy {
    fn value_variants<'a>() -> &'a [Self] {
        &[Strategy::None, Strategy::V, Strategy::K, Strategy::Kv]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

impl clap::ValueEnum for Order {
    fn value_variants<'a>() -> &'a [Self] {
        &[Order::Euler, Order::Rf2]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Order::Euler => "euler",
            Order::Rf2 => "rf2",
        }))
    }
}

impl clap::ValueEnum for Timbre {
    fn value_variants<'a>() -> &'a [Self] {
        &Timbre::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

impl clap::ValueEnum for Style {
    fn value_variants<'a>() -> &'a [Self] {
        &Style::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// Parses `args` (program name first) and runs the command, writing human
/// output to `out`. Returns the exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a, &cfg, out),
        Command::Train(a) => cmd_train(a, &cfg, out),
        Command::Reconstruct(a) => cmd_reconstruct(a, &cfg, out),
        Command::Edit(a) => cmd_edit(a, &cfg, out),
        Command::Sweep(a) => cmd_sweep(a, &cfg, out),
        Command::Eval(a) => cmd_eval(a, out),
    }
}

fn gen_corpus(a: GenCorpusArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let count = a.count.unwrap_or(cfg.corpus.count);
    let seed = a.seed.unwrap_or(cfg.corpus.seed);
    let mut corpus = make_corpus(count, seed)?;
    if a.transfer {
        for c in &mut corpus.clips {
            let timbre = next_timbre(&c.spec).timbre;
            let gt = ground_truth_edit(&c.spec, EditTarget::Timbre(timbre))?;
            c.spec = c.spec.with_timbre(timbre);
            c.signal = gt.signal;
            c.latent = gt.latent;
        }
    }
    let path = write_corpus(&a.out, &corpus, count, seed)?;
    writeln!(out, "{} clips -> {}", corpus.len(), path.display())?;
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let corpus = read_corpus(dir)?;
    if corpus.is_empty() {
        return Err(Error::format(0, format!("corpus {} is empty", dir.display())));
    }
    Ok(corpus)
}

fn find_clip<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a Clip> {
    corpus
        .clips
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::arg(format!("no clip '{id}' in corpus")))
}

fn cmd_train(a: TrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let data: Vec<TrainPair> = corpus
        .split(Split::Train)
        .map(|c| TrainPair {
            z0: None,
            z1: c.latent.clone(),
            label: label_of(&c.spec),
        })
        .collect();
    let mut tc = cfg.train.clone();
    tc.steps = a.steps.unwrap_or(tc.steps);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.target_ratio = a.target_ratio.or(tc.target_ratio);
    let mut net = Net::new(cfg.net.clone())?;
    let report = train(&mut net, &data, &tc)?;
    write_checkpoint(&a.out, &net)?;
    let curve = a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut w = csv::Writer::from_path(&curve)?;
    w.write_record(["step", "loss", "smoothed"])?;
    for (i, (l, s)) in report.losses.iter().zip(&report.smoothed).enumerate() {
        w.write_record([i.to_string(), format!("{l:.8}"), format!("{s:.8}")])?;
    }
    w.flush()?;
    writeln!(
        out,
        "trained {} steps on {} clips: loss {:.4} -> {:.4} ({:.2}x); checkpoint {}",
        report.steps,
        data.len(),
        report.initial,
        report.final_smoothed(),
        report.reduction(),
        a.out.display()
    )?;
    if !(report.final_smoothed() < report.initial) {
        return Err(Error::Training {
            step: report.steps,
            loss: report.final_smoothed(),
        });
    }
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let net = read_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let clip = find_clip(&corpus, &a.clip)?;
    let steps = a.steps.unwrap_or(cfg.edit.steps);
    let solvers = match a.solver.as_str() {
        "both" => vec![Order::Euler, Order::Rf2],
        "euler" => vec![Order::Euler],
        "rf2" => vec![Order::Rf2],
        s => return Err(Error::arg(format!("unknown solver '{s}' (euler, rf2, both)"))),
    };
    let grid = TimeGrid::uniform(steps, Direction::Reverse)?;
    let cond = net.condition(label_of(&clip.spec))?;
    for order in solvers {
        let r = reconstruct(&net, &clip.latent, &grid, &SolverConfig::with_order(order), &cond)?;
        let name = if order == Order::Euler { "euler" } else { "rf2" };
        writeln!(out, "{{\"clip\":\"{}\",\"solver\":\"{name}\",\"steps\":{steps},\"rel_error\":{:e}}}", clip.id, r.error)?;
    }
    Ok(())
}

fn cmd_edit(a: EditArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let net = read_checkpoint(&a.checkpoint)?;
    let manifest = read_manifest(&a.corpus)?;
    let corpus = load_corpus(&a.corpus)?;
    let clip = find_clip(&corpus, &a.clip)?;
    let source = class_of(&clip.spec);
    let default_target = next_timbre(&clip.spec);
    let target = ClassLabel {
        timbre: a.target_timbre.unwrap_or(default_target.timbre),
        style: a.target_style.unwrap_or(source.style),
    };
    let mut ec = cfg.edit;
    ec.strategy = a.strategy.unwrap_or(ec.strategy);
    ec.steps = a.steps.unwrap_or(ec.steps);
    ec.injection_steps = a.injection_steps.unwrap_or(ec.injection_steps.min(ec.steps));
    ec.injection_block = a.injection_block.unwrap_or(ec.injection_block);
    ec.source_cfg = a.source_cfg.unwrap_or(ec.source_cfg);
    ec.target_cfg = a.target_cfg.unwrap_or(ec.target_cfg);
    ec.solver = a.solver.unwrap_or(ec.solver);
    let result = edit_latent(&net, &clip.latent, source.into(), target.into(), &ec)?;
    write_latent(&a.out, &result.edited_latent)?;
    let audio = LatentCodec::default().decode(&result.edited_latent, DEFAULT_DURATION)?;
    let wav = a.out.with_extension("wav");
    wav_write(&wav, &audio)?;
    let record = EditManifest {
        source_file: clip.id.clone(),
        source_label: source,
        target_label: target,
        steps: ec.steps,
        source_cfg: ec.source_cfg,
        target_cfg: ec.target_cfg,
        strategy: ec.strategy,
        injection_steps: ec.injection_steps,
        injection_block: ec.injection_block,
        solver: ec.solver,
        seed: manifest.seed,
    };
    fs::write(a.out.with_extension("json"), serde_json::to_vec_pretty(&record)?)?;

    let protos = decoded_prototypes(corpus.split(Split::Train))?;
    let proto = |l: ClassLabel| {
        protos
            .get(&l.into())
            .ok_or_else(|| Error::arg(format!("no training clips of class {l}")))
    };
    let report = MetricReport::compute(&decoded(clip)?, &audio, proto(source)?, proto(target)?)?;
    let row = MetricRow {
        clip_id: clip.id.clone(),
        source_class: source.to_string(),
        target_class: target.to_string(),
        strategy: ec.strategy.name().into(),
        n: Some(ec.injection_steps),
        m: Some(ec.injection_block),
        chroma_sim: Some(report.chroma_sim),
        cqt_pcc: Some(report.cqt_pcc),
        align_source: Some(report.align_source),
        align_target: Some(report.align_target),
        fad: None,
    };
    if let Some(p) = &a.metrics {
        append_metric_rows(p, &[row.clone()])?;
    }
    if let Some(p) = &a.results {
        let score = crate::edit::EditScore {
            fidelity: report.chroma_sim,
            transferability: report.align_target,
        };
        append_edit_result(p, &record, &score, &a.out.display().to_string())?;
    }
    write_metric_rows(&mut *out, &[row], true)?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let net = read_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let n_grid = a.n_grid.unwrap_or_else(|| cfg.sweep.n_grid.clone());
    let m_grid = a.m_grid.unwrap_or_else(|| cfg.sweep.m_grid.clone());
    let strategy = a.strategy.unwrap_or(cfg.sweep.strategy);
    let limit = a.clips.unwrap_or(cfg.sweep.clips);
    let mut jobs = transfer_jobs(corpus.split(Split::Eval))?;
    if limit > 0 {
        jobs.truncate(limit);
    }
    let scorer = scorer(corpus.split(Split::Train))?;
    let rows = sweep(&net, &jobs, &n_grid, &m_grid, strategy, &cfg.edit, &scorer)?;
    write_sweep_rows(fs::File::create(&a.out)?, &rows)?;
    write_sweep_rows(&mut *out, &rows)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ca = load_corpus(&a.a)?;
    let cb = load_corpus(&a.b)?;
    if ca.len() != cb.len() {
        return Err(Error::dim(format!("corpora hold {} and {} clips", ca.len(), cb.len())));
    }
    let pa = prototypes(&ca.clips)?;
    let pb = prototypes(&cb.clips)?;
    let mut rows = Vec::with_capacity(ca.len() + 1);
    let (mut ea, mut eb) = (Vec::new(), Vec::new());
    for (x, y) in ca.clips.iter().zip(&cb.clips) {
        let (lx, ly) = (label_of(&x.spec), label_of(&y.spec));
        let r = MetricReport::compute(&x.signal, &y.signal, &pa[&lx], &pb[&ly])?;
        rows.push(MetricRow {
            clip_id: format!("{}:{}", x.id, y.id),
            source_class: class_of(&x.spec).to_string(),
            target_class: class_of(&y.spec).to_string(),
            strategy: String::new(),
            n: None,
            m: None,
            chroma_sim: Some(r.chroma_sim),
            cqt_pcc: Some(r.cqt_pcc),
            align_source: Some(r.align_source),
            align_target: Some(r.align_target),
            fad: None,
        });
        ea.push(embed_toy(&x.signal)?);
        eb.push(embed_toy(&y.signal)?);
    }
    let fad = frechet_distance(&gaussian_stats(&ea)?, &gaussian_stats(&eb)?)?;
    rows.push(MetricRow::summary(fad));
    if let Some(p) = &a.out {
        write_metric_rows(fs::File::create(p)?, &rows, true)?;
    }
    write_metric_rows(&mut *out, &rows, true)?;
    Ok(())
}
