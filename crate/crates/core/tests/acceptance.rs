//! The ten acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line with the measured quantities.
//!
//! Tests take a shared lock so that timed criteria do not compete for the CPU.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rfedit::dsp::{chroma_from_cqt, cqt, tone, CqtParams, Signal, DEFAULT_SAMPLE_RATE};
use rfedit::edit::{
    combine_guidance, edit, guided_velocity, invert_and_cache, sweep, sweep_trend, AttentionCache, EditConfig,
    SweepAxis, SweepRow,
};
use rfedit::experiment::{label_of, scorer, transfer_jobs};
use rfedit::flow::{integrate, Direction, FlowState, FnField, Latent, TimeGrid, VelocityField};
use rfedit::metrics::{chroma_similarity, cqt_pcc, embed_toy, frechet_distance, gaussian_stats, GaussianStats};
use rfedit::net::{
    gradient_check, jittered, read_checkpoint, train, AttentionTap, FlowSample, Label, Net, NetConfig, Strategy,
    TrainConfig, TrainPair,
};
use rfedit::solver::{convergence_order, invert, reconstruct, FdStep, Order, SolverConfig};
use rfedit::synth::{make_corpus, Corpus, Split};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| make_corpus(20, 7).unwrap())
}

fn checkpoint() -> &'static Net {
    static NET: OnceLock<Net> = OnceLock::new();
    NET.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/toy.ckpt");
        read_checkpoint(path).unwrap()
    })
}

fn report(n: usize, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {name:<28} {verdict}  {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn gaussian(shape: (usize, usize), seed: u64) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))
}

fn max_abs(a: &Latent, b: &Latent) -> f64 {
    Zip::from(a).and(b).fold(0.0f64, |m, x, y| m.max((x - y).abs()))
}

#[test]
fn c01_solver_order() {
    let _g = serial();
    let started = Instant::now();
    let field = FnField(|z: &Latent, t: f64| z.mapv(|x| (2.0 * std::f64::consts::PI * t).sin() * (1.0 + 0.1 * x)));
    let z0 = Array2::from_shape_vec((1, 3), vec![-1.0, 0.5, 2.0]).unwrap();
    let fd = FdStep::Relative(0.1);

    // Reference: the same field integrated with K = 8192 second-order steps.
    const K_REF: usize = 8192;
    let grid = TimeGrid::uniform(K_REF, Direction::Forward).unwrap();
    let reference = integrate(
        &field,
        &FlowState::new(z0.clone(), 0.0).unwrap(),
        &grid,
        &SolverConfig::rf2().with_fd_step(fd),
        &(),
    )
    .unwrap();
    // The field separates: 1 + 0.1 z = (1 + 0.1 z0) exp(0.1 (1 - cos 2πt) / 2π).
    let closed = |t: f64| {
        let g = (0.1 * (1.0 - (2.0 * std::f64::consts::PI * t).cos()) / (2.0 * std::f64::consts::PI)).exp();
        z0.mapv(|x| ((1.0 + 0.1 * x) * g - 1.0) / 0.1)
    };
    let ref_gap = reference.iter().map(|s| max_abs(&s.z, &closed(s.t))).fold(0.0, f64::max);
    let exact = |t: f64| reference[(t * K_REF as f64).round() as usize].z.clone();

    let ks = [8, 16, 32, 64, 128];
    let r = convergence_order(&field, &z0, &exact, &ks, fd, &()).unwrap();
    let euler = r.euler.slope().unwrap();
    let rf2 = r.rf2.slope().unwrap();
    let elapsed = started.elapsed();
    report(
        1,
        "solver order",
        (0.8..=1.2).contains(&euler)
            && (1.7..=2.3).contains(&rf2)
            && ref_gap < 0.01 * r.rf2_errors.iter().cloned().fold(f64::MAX, f64::min)
            && elapsed < Duration::from_secs(10),
        format!("euler slope {euler:.3}, rf2 slope {rf2:.3}, reference vs closed form {ref_gap:.1e}, {elapsed:.2?}"),
    );
}

#[test]
fn c02_fd_exact_on_affine_time_field() {
    let _g = serial();
    let a = Array2::from_shape_vec((2, 2), vec![0.3, -1.2, 2.0, 0.0]).unwrap();
    let b = Array2::from_shape_vec((2, 2), vec![-0.7, 0.4, 1.5, -2.5]).unwrap();
    let field = FnField(|_: &Latent, t: f64| &a + &(&b * t));
    let z0 = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let flow_map = |t0: f64, t1: f64| &z0 + &(&a * (t1 - t0)) + &(&b * (0.5 * (t1 * t1 - t0 * t0)));
    let mut worst = 0.0f64;
    let grids = [
        TimeGrid::uniform(1, Direction::Forward).unwrap(),
        TimeGrid::uniform(3, Direction::Forward).unwrap(),
        TimeGrid::uniform(7, Direction::Reverse).unwrap(),
        TimeGrid::from_times(vec![0.0, 0.01, 0.37, 0.4, 1.0]).unwrap(),
        TimeGrid::from_times(vec![1.0, 0.55, 0.05, 0.0]).unwrap(),
    ];
    for fd in [FdStep::Fixed(0.01), FdStep::Fixed(0.1), FdStep::Relative(0.05)] {
        for grid in &grids {
            let t0 = grid.times()[0];
            let traj = integrate(
                &field,
                &FlowState::new(z0.clone(), t0).unwrap(),
                grid,
                &SolverConfig::rf2().with_fd_step(fd),
                &(),
            )
            .unwrap();
            for s in &traj {
                worst = worst.max(max_abs(&s.z, &flow_map(t0, s.t)));
            }
        }
    }
    report(2, "fd exactness on a+bt", worst <= 1e-12, format!("max deviation {worst:.2e}"));
}

#[test]
fn c03_inversion_round_trip() {
    let _g = serial();
    let net = checkpoint();
    let eval: Vec<_> = corpus().split(Split::Eval).collect();
    let started = Instant::now();
    let mut rf2_better = 0;
    let mut both_decrease = 0;
    let (mut mean_euler, mut mean_rf2) = (0.0, 0.0);
    for clip in &eval {
        let cond = net.condition(label_of(&clip.spec)).unwrap();
        let err = |n: usize, order: Order| {
            let grid = TimeGrid::uniform(n, Direction::Reverse).unwrap();
            reconstruct(net, &clip.latent, &grid, &SolverConfig::with_order(order), &cond)
                .unwrap()
                .error
        };
        let (e25, r25) = (err(25, Order::Euler), err(25, Order::Rf2));
        let (e50, r50) = (err(50, Order::Euler), err(50, Order::Rf2));
        rf2_better += usize::from(r25 < e25);
        both_decrease += usize::from(e50 < e25 && r50 < r25);
        mean_euler += e25 / eval.len() as f64;
        mean_rf2 += r25 / eval.len() as f64;
    }
    let elapsed = started.elapsed();
    let share = rf2_better as f64 / eval.len() as f64;
    report(
        3,
        "inversion round trip",
        eval.len() == 40 && share >= 0.9 && both_decrease == eval.len() && elapsed < Duration::from_secs(120),
        format!(
            "rf2 < euler on {rf2_better}/{} clips, both fall with 2N on {both_decrease}, mean rel. error euler {mean_euler:.4} rf2 {mean_rf2:.4}, {elapsed:.1?}",
            eval.len()
        ),
    );
}

#[test]
fn c04_cfg_collapse() {
    let _g = serial();
    let net = checkpoint();
    let z = gaussian(net.latent_shape(), 4);
    let cond = net.condition(Label::Class { timbre: 2, style: 1 }).unwrap();
    let null = net.null_condition();
    let mut ok = true;
    for t in [0.0, 0.3, 0.9] {
        let vc = net.velocity(&z, t, &cond).unwrap();
        let vu = net.velocity(&z, t, &null).unwrap();
        ok &= guided_velocity(net, &z, t, &cond, &null, 1.0).unwrap() == vc;
        ok &= guided_velocity(net, &z, t, &cond, &null, 0.0).unwrap() == vu;
        ok &= vc != vu;
    }
    let one = |x: f64| Array2::from_elem((1, 1), x);
    let scalar = combine_guidance(&one(2.0), &one(1.0), 20.0)[(0, 0)];
    report(
        4,
        "cfg collapse",
        ok && scalar == 21.0,
        format!("s=1 and s=0 bitwise: {ok}, scalar (1, 2, s=20) -> {scalar}"),
    );
}

#[test]
fn c05_injection_identities() {
    let _g = serial();
    let net = checkpoint();
    let single = net.config().single_blocks;
    let shape = net.latent_shape();
    let labels = [Label::Class { timbre: 0, style: 3 }, Label::Class { timbre: 3, style: 1 }, Label::Null];

    // (a) recording never perturbs, per forward call and over a whole inversion.
    let mut record_ok = true;
    for (i, &label) in labels.iter().enumerate() {
        let z = gaussian(shape, 10 + i as u64);
        let cond = net.condition(label).unwrap();
        let plain = net.forward(&z, 0.25 * i as f64 + 0.1, &cond, &mut AttentionTap::passthrough()).unwrap();
        let recorded = net.forward(&z, 0.25 * i as f64 + 0.1, &cond, &mut AttentionTap::record(1)).unwrap();
        record_ok &= plain == recorded;
    }
    let clip = &corpus().clips[1];
    let src = net.condition(label_of(&clip.spec)).unwrap();
    let cfg = EditConfig {
        steps: 10,
        injection_steps: 10,
        strategy: Strategy::Kv,
        ..EditConfig::default()
    };
    let cached = invert_and_cache(net, &clip.latent, &src, &cfg).unwrap();
    let grid = TimeGrid::uniform(cfg.steps, Direction::Reverse).unwrap();
    let plain = invert(net, &clip.latent, &grid, &SolverConfig::rf2(), &src).unwrap();
    record_ok &= cached.noise == plain.noise_latent;

    // (b) replacing with one's own tensors is the identity.
    let mut self_gap = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let z = gaussian(shape, 20 + i as u64);
        let cond = net.condition(label).unwrap();
        let mut rec = AttentionTap::record(1);
        let base = net.forward(&z, 0.4, &cond, &mut rec).unwrap();
        let own = rec.into_recorded();
        for s in [Strategy::V, Strategy::K, Strategy::Kv] {
            let out = net.forward(&z, 0.4, &cond, &mut AttentionTap::replace(s, &own, 1)).unwrap();
            self_gap = self_gap.max(max_abs(&out, &base));
        }
    }

    // (c) V replacement keeps the probabilities of every block up to and
    // including the first injected one. Later blocks receive a different
    // residual stream, so their queries and keys legitimately move.
    let z = gaussian(shape, 30);
    let donor = net.condition(Label::Class { timbre: 1, style: 0 }).unwrap();
    let target = net.condition(Label::Class { timbre: 2, style: 2 }).unwrap();
    let mut probs_ok = true;
    let mut k_moves = true;
    for m in 1..=single {
        let mut rec = AttentionTap::record(m);
        net.forward(&z, 0.5, &donor, &mut rec).unwrap();
        let cache = rec.into_recorded();
        let mut plain = AttentionTap::passthrough().with_probabilities();
        net.forward(&z, 0.5, &target, &mut plain).unwrap();
        let mut v = AttentionTap::replace(Strategy::V, &cache, m).with_probabilities();
        net.forward(&z, 0.5, &target, &mut v).unwrap();
        let mut k = AttentionTap::replace(Strategy::K, &cache, m).with_probabilities();
        net.forward(&z, 0.5, &target, &mut k).unwrap();
        let (p, pv, pk) = (plain.probabilities().unwrap(), v.probabilities().unwrap(), k.probabilities().unwrap());
        for b in 1..=m {
            probs_ok &= p[&(0, b)] == pv[&(0, b)];
        }
        k_moves &= p[&(0, m)] != pk[&(0, m)];
    }

    // (d) cache cardinality n × (S − m + 1) for every configuration.
    let mut sizes: BTreeMap<(usize, usize, usize), (usize, usize)> = BTreeMap::new();
    let mut card_ok = true;
    for (steps, n, m) in [(4, 4, 1), (4, 2, 3), (6, 1, 4), (6, 5, 2), (5, 3, 1)] {
        let cfg = EditConfig {
            steps,
            injection_steps: n,
            injection_block: m,
            strategy: Strategy::V,
            ..EditConfig::default()
        };
        let out = invert_and_cache(net, &clip.latent, &src, &cfg).unwrap();
        let expected = n * (single - m + 1);
        card_ok &= out.cache.len() == expected
            && AttentionCache::expected_len(n, m, single) == expected
            && out.cache.check().is_ok();
        let edited = edit(net, &out.noise, &out.cache, &src, &cfg).unwrap();
        card_ok &= edited.diagnostics.iter().filter(|d| d.injected_from.is_some()).count() == n;
        sizes.insert((steps, n, m), (out.cache.len(), expected));
    }
    report(
        5,
        "injection identities",
        record_ok && self_gap <= 1e-12 && probs_ok && k_moves && card_ok,
        format!(
            "record bitwise {record_ok}, self-replacement gap {self_gap:.1e}, V keeps probabilities {probs_ok} (K moves them {k_moves}), cardinality {card_ok} {sizes:?}"
        ),
    );
}

fn sweep_rows(net: &Net) -> (Vec<SweepRow>, usize, Duration) {
    let corpus = corpus();
    let jobs = transfer_jobs(corpus.split(Split::Eval)).unwrap();
    let scorer = scorer(corpus.split(Split::Train)).unwrap();
    let started = Instant::now();
    let rows = sweep(net, &jobs, &[3, 8, 15, 25], &[1, 2, 3, 4], Strategy::V, &EditConfig::default(), &scorer).unwrap();
    (rows, jobs.len(), started.elapsed())
}

#[test]
fn c06_tradeoff_trends() {
    let _g = serial();
    let (rows, clips, elapsed) = sweep_rows(checkpoint());
    let fid = sweep_trend(&rows, SweepAxis::InjectionSteps, |r| r.fidelity).unwrap();
    let trans = sweep_trend(&rows, SweepAxis::InjectionBlock, |r| r.transferability).unwrap();
    let grid: Vec<String> = rows
        .iter()
        .map(|r| format!("(n{} m{}: {:.3}/{:.3})", r.injection_steps, r.injection_block, r.fidelity, r.transferability))
        .collect();
    report(
        6,
        "trade-off trends",
        clips >= 20 && rows.len() == 16 && fid >= 0.5 && trans >= 0.5 && elapsed < Duration::from_secs(900),
        format!(
            "{clips} clips, spearman fidelity~n {fid:.3}, transferability~m {trans:.3}, {elapsed:.1?}; fidelity/transfer {}",
            grid.join(" ")
        ),
    );
}

#[test]
fn c07_kv_beats_no_injection() {
    let _g = serial();
    let net = checkpoint();
    let corpus = corpus();
    let jobs = transfer_jobs(corpus.split(Split::Eval)).unwrap();
    let scorer = scorer(corpus.split(Split::Train)).unwrap();
    let mut means = BTreeMap::new();
    for strategy in [Strategy::None, Strategy::Kv] {
        let cfg = EditConfig {
            strategy,
            ..EditConfig::default()
        };
        let (mut fid, mut trans) = (0.0, 0.0);
        for j in &jobs {
            let src = net.condition(j.source).unwrap();
            let inv = invert_and_cache(net, &j.latent, &src, &cfg).unwrap();
            let out = edit(net, &inv.noise, &inv.cache, &net.condition(j.target).unwrap(), &cfg).unwrap();
            let s = scorer.score(&j.signal, &out.edited_latent, j.target).unwrap();
            fid += s.fidelity / jobs.len() as f64;
            trans += s.transferability / jobs.len() as f64;
        }
        means.insert(strategy.name(), (fid, trans));
    }
    let (kv, none) = (means["kv"], means["none"]);
    report(
        7,
        "kv beats no injection",
        kv.0 >= none.0 && kv.1 >= 0.8 * none.1,
        format!(
            "{} clips, chroma kv {:.4} vs none {:.4}, transferability kv {:.4} vs 0.8 x none {:.4}",
            jobs.len(),
            kv.0,
            none.0,
            kv.1,
            0.8 * none.1
        ),
    );
}

fn stats_1d(mean: f64, var: f64) -> GaussianStats {
    GaussianStats {
        mean: nalgebra::DVector::from_element(1, mean),
        covariance: nalgebra::DMatrix::from_element(1, 1, var),
        count: 2,
        regularized: false,
    }
}

#[test]
fn c08_metric_identities() {
    let _g = serial();
    let clips = &corpus().clips[..24];
    let emb: Vec<Vec<f64>> = clips.iter().map(|c| embed_toy(&c.signal).unwrap()).collect();
    let s = gaussian_stats(&emb).unwrap();
    let fad_self = frechet_distance(&s, &s).unwrap();
    let shift = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 1.0)).unwrap();
    let widen = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(0.0, 4.0)).unwrap();

    let x = &clips[0].signal;
    let chroma_self = chroma_similarity(x, x).unwrap();
    let pcc_self = cqt_pcc(x, x).unwrap();
    let pcc_scaled = cqt_pcc(x, &x.scaled(0.25)).unwrap();

    let sr = DEFAULT_SAMPLE_RATE;
    let pitch_class = |s: &Signal| {
        let chroma = chroma_from_cqt(&cqt(s, &CqtParams::default()).unwrap()).unwrap();
        let mid = chroma.frames() / 2;
        chroma.argmax(mid)
    };
    let (a4, a5) = (pitch_class(&tone(440.0, 0.5, 1.0, sr)), pitch_class(&tone(880.0, 0.5, 1.0, sr)));
    let ok = fad_self <= 1e-8
        && (shift - 1.0).abs() <= 1e-12
        && (widen - 1.0).abs() <= 1e-12
        && (chroma_self - 1.0).abs() <= 1e-12
        && (pcc_self - 1.0).abs() <= 1e-12
        && (pcc_scaled - 1.0).abs() <= 1e-9
        && a4.is_some()
        && a4 == a5;
    report(
        8,
        "metric identities",
        ok,
        format!(
            "FAD(a,a) {fad_self:.1e}, N(0,1)|N(1,1) {shift}, N(0,1)|N(0,4) {widen}, chroma self {chroma_self}, pcc self {pcc_self}, pcc vs 0.25x {pcc_scaled:.12}, argmax 440 {a4:?} 880 {a5:?}"
        ),
    );
}

#[test]
fn c09_gradient_check() {
    let _g = serial();
    // adaLN-zero starts with most paths switched off; jitter turns them on.
    let net = jittered(&Net::new(NetConfig::default()).unwrap(), 0.05, 9);
    let shape = net.latent_shape();
    let mut worst = 0.0f64;
    let mut probed = 0;
    for (i, label) in [Label::Class { timbre: 3, style: 2 }, Label::Null].into_iter().enumerate() {
        let sample = FlowSample {
            z0: gaussian(shape, 40 + i as u64),
            z1: gaussian(shape, 50 + i as u64),
            t: 0.35 + 0.3 * i as f64,
            label,
        };
        let r = gradient_check(&net, &sample, 80, 1e-5, i as u64).unwrap();
        worst = worst.max(r.max_relative_error);
        probed += r.coordinates;
    }
    report(
        9,
        "gradient check",
        probed >= 100 && worst < 1e-4,
        format!("{probed} coordinates, max relative error {worst:.2e}"),
    );
}

#[test]
fn c10_velocity_matching() {
    let _g = serial();
    let data: Vec<TrainPair> = corpus()
        .split(Split::Train)
        .map(|c| TrainPair {
            z0: None,
            z1: c.latent.clone(),
            label: label_of(&c.spec),
        })
        .collect();
    let mut net = Net::new(NetConfig::default()).unwrap();
    let tc = TrainConfig {
        steps: 2000,
        target_ratio: Some(5.0),
        ..TrainConfig::default()
    };
    let corpus_run = train(&mut net, &data, &tc).unwrap();

    let shape = net.latent_shape();
    let pair = [TrainPair {
        z0: Some(gaussian(shape, 60)),
        z1: corpus().clips[0].latent.clone(),
        label: label_of(&corpus().clips[0].spec),
    }];
    let mut single = Net::new(NetConfig::default()).unwrap();
    let memo = train(
        &mut single,
        &pair,
        &TrainConfig {
            steps: 6000,
            batch_size: 1,
            learning_rate: 3e-3,
            null_prob: 0.0,
            smoothing: 20,
            cosine_decay: true,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    report(
        10,
        "velocity matching",
        corpus_run.reduction() >= 5.0 && corpus_run.steps <= 2000 && memo.final_smoothed() < 1e-4,
        format!(
            "corpus loss {:.3} -> {:.3} ({:.2}x) in {} steps; single pair {:.3} -> {:.2e}",
            corpus_run.initial,
            corpus_run.final_smoothed(),
            corpus_run.reduction(),
            corpus_run.steps,
            memo.initial,
            memo.final_smoothed()
        ),
    );
}
