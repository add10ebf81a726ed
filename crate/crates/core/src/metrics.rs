//! Objective edit metrics: chroma similarity, CQT magnitude correlation,
//! Fréchet distance between embedding Gaussians, and a band-energy
//! embedding with prototype alignment.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dsp::{chroma_from_cqt, mel_spectrogram, CqtParams, CqtPlan, MelParams, Signal};
use crate::error::{Error, Result};

/// Dimension of [`embed_toy`].
pub const EMBED_DIM: usize = 32;

/// Diagonal loading added when a covariance is near singular.
pub const COV_EPSILON: f64 = 1e-6;
const COV_TRIGGER: f64 = 1e-8;

fn default_plan() -> &'static CqtPlan {
    static PLAN: OnceLock<CqtPlan> = OnceLock::new();
    PLAN.get_or_init(|| {
        CqtPlan::new(CqtParams::default(), crate::dsp::DEFAULT_SAMPLE_RATE)
            .expect("default CQT parameters are valid at 16 kHz")
    })
}

fn cqt_default(x: &Signal) -> Result<crate::dsp::CqtSpectrum> {
    if x.sample_rate == crate::dsp::DEFAULT_SAMPLE_RATE {
        default_plan().transform(x)
    } else {
        crate::dsp::cqt(x, &CqtParams::default())
    }
}

fn check_pair(x: &Signal, y: &Signal) -> Result<()> {
    if x.sample_rate != y.sample_rate {
        return Err(Error::dim(format!(
            "sample rates differ: {} vs {}",
            x.sample_rate, y.sample_rate
        )));
    }
    if x.len().abs_diff(y.len()) > CqtParams::default().hop {
        return Err(Error::dim(format!(
            "durations differ by more than one hop: {} vs {} samples",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Frames quieter than this fraction of a signal's loudest chroma frame
/// (about −30 dB) count as silent.
pub const CHROMA_GATE: f64 = 0.03;

fn loud_frames(c: &crate::dsp::Chromagram) -> Vec<bool> {
    let peak = c.norms.iter().fold(0.0f64, |m, &n| m.max(n));
    c.voiced
        .iter()
        .zip(&c.norms)
        .map(|(&v, &n)| v && n >= CHROMA_GATE * peak)
        .collect()
}

/// Mean framewise cosine between chromagrams over frames voiced in both.
pub fn chroma_similarity(x: &Signal, y: &Signal) -> Result<f64> {
    check_pair(x, y)?;
    let cx = chroma_from_cqt(&cqt_default(x)?)?;
    let cy = chroma_from_cqt(&cqt_default(y)?)?;
    let (lx, ly) = (loud_frames(&cx), loud_frames(&cy));
    let frames = cx.frames().min(cy.frames());
    let (mut sum, mut count) = (0.0, 0usize);
    for f in 0..frames {
        if lx[f] && ly[f] {
            // Voiced columns are unit length.
            sum += cx.energies.column(f).dot(&cy.energies.column(f));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no frame is voiced in both signals".into()));
    }
    Ok(sum / count as f64)
}

/// Pearson correlation of time-averaged CQT magnitudes.
pub fn cqt_pcc(x: &Signal, y: &Signal) -> Result<f64> {
    check_pair(x, y)?;
    let a = cqt_default(x)?.mean_magnitudes();
    let b = cqt_default(y)?.mean_magnitudes();
    pearson(&a, &b)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim(format!("lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("zero-variance input to correlation".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
    /// Whether `COV_EPSILON * I` was added.
    pub regularized: bool,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance, diagonally loaded when near singular.
pub fn gaussian_stats(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    let mut stats = gaussian_stats_raw(embeddings)?;
    let min_eig = SymmetricEigen::new(stats.covariance.clone())
        .eigenvalues
        .min();
    if min_eig < COV_TRIGGER {
        for i in 0..stats.dim() {
            stats.covariance[(i, i)] += COV_EPSILON;
        }
        stats.regularized = true;
    }
    Ok(stats)
}

/// [`gaussian_stats`] without the diagonal loading.
pub fn gaussian_stats_raw(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    if embeddings.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 samples, got {}",
            embeddings.len()
        )));
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::dim("embeddings must share a positive dimension"));
    }
    let n = embeddings.len();
    let mut mean = DVector::zeros(d);
    for e in embeddings {
        mean += DVector::from_column_slice(e);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for e in embeddings {
        let c = DVector::from_column_slice(e) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    // Exact symmetry regardless of accumulation order.
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean,
        covariance: cov,
        count: n,
        regularized: false,
    })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|μa − μb|² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    // tr (Σa^½ Σb Σa^½)^½ is the nuclear norm of Σb^½ Σa^½. Taking singular values
    // directly avoids square-rooting round-off in the near-null eigenvalues.
    let product = sym_sqrt(&b.covariance) * sym_sqrt(&a.covariance);
    let cross: f64 = product.singular_values().iter().sum();
    let diff = (&a.mean - &b.mean).norm_squared();
    Ok((diff + a.covariance.trace() + b.covariance.trace() - 2.0 * cross).max(0.0))
}

/// Per-band mean and standard deviation of log mel energy, 16 + 16 values.
pub fn embed_toy(x: &Signal) -> Result<Vec<f64>> {
    let mel = mel_spectrogram(x, &MelParams::default())?;
    let frames = mel.nrows() as f64;
    let mut out = Vec::with_capacity(EMBED_DIM);
    let means: Vec<f64> = mel.columns().into_iter().map(|c| c.sum() / frames).collect();
    out.extend_from_slice(&means);
    for (c, m) in mel.columns().into_iter().zip(&means) {
        out.push((c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / frames).sqrt());
    }
    Ok(out)
}

/// Cosine between the signal's embedding and a class prototype.
pub fn alignment(x: &Signal, prototype: &[f64]) -> Result<f64> {
    cosine(&embed_toy(x)?, prototype)
}

/// Per-class mean embedding.
pub fn class_prototypes<K: Ord + Clone>(labelled: &[(K, Vec<f64>)]) -> Result<BTreeMap<K, Vec<f64>>> {
    let mut sums: BTreeMap<K, (Vec<f64>, usize)> = BTreeMap::new();
    for (k, e) in labelled {
        let entry = sums
            .entry(k.clone())
            .or_insert_with(|| (vec![0.0; e.len()], 0));
        if entry.0.len() != e.len() {
            return Err(Error::dim("embeddings of one class differ in length"));
        }
        entry.0.iter_mut().zip(e).for_each(|(s, x)| *s += x);
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chroma_sim: f64,
    pub cqt_pcc: f64,
    pub align_source: f64,
    pub align_target: f64,
}

impl MetricReport {
    pub fn compute(
        source: &Signal,
        edited: &Signal,
        source_prototype: &[f64],
        target_prototype: &[f64],
    ) -> Result<Self> {
        let e = embed_toy(edited)?;
        Ok(Self {
            chroma_sim: chroma_similarity(source, edited)?,
            cqt_pcc: cqt_pcc(source, edited)?,
            align_source: cosine(&e, source_prototype)?,
            align_target: cosine(&e, target_prototype)?,
        })
    }
}

/// One line of the metric CSV. `fad` is filled only on the summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub clip_id: String,
    pub source_class: String,
    pub target_class: String,
    pub strategy: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub chroma_sim: Option<f64>,
    pub cqt_pcc: Option<f64>,
    pub align_source: Option<f64>,
    pub align_target: Option<f64>,
    pub fad: Option<f64>,
}

pub const METRIC_HEADER: [&str; 11] = [
    "clip_id",
    "source_class",
    "target_class",
    "strategy",
    "n",
    "m",
    "chroma_sim",
    "cqt_pcc",
    "align_source",
    "align_target",
    "fad",
];

impl MetricRow {
    pub fn summary(fad: f64) -> Self {
        Self {
            clip_id: "summary".into(),
            source_class: String::new(),
            target_class: String::new(),
            strategy: String::new(),
            n: None,
            m: None,
            chroma_sim: None,
            cqt_pcc: None,
            align_source: None,
            align_target: None,
            fad: Some(fad),
        }
    }
}

/// Appends rows, writing the header first when the sink is empty.
pub fn write_metric_rows<W: Write>(sink: W, rows: &[MetricRow], with_header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(with_header).from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends to `path`, creating it with a header if needed.
pub fn append_metric_rows(path: impl AsRef<std::path::Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    write_metric_rows(file, rows, fresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::tone;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn hz(m: f64) -> f64 {
        440.0 * 2f64.powf((m - 69.0) / 12.0)
    }

    fn melody(pitches: &[f64]) -> Signal {
        let mut s = Vec::new();
        for &p in pitches {
            let f = hz(p);
            s.extend(tone(f, 0.3, 0.5, 16000).mix(&tone(2.0 * f, 0.15, 0.5, 16000)).unwrap().samples);
        }
        Signal::new(s, 16000).unwrap()
    }

    fn stats_1d(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, var),
            count: 100,
            regularized: false,
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let x = melody(&[60.0, 64.0, 67.0, 72.0]);
        assert_abs_diff_eq!(chroma_similarity(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cqt_pcc(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tritone_transposition_lowers_chroma_similarity() {
        let x = melody(&[60.0, 62.0, 64.0, 65.0]);
        let y = melody(&[66.0, 68.0, 70.0, 71.0]);
        let cross = chroma_similarity(&x, &y).unwrap();
        assert!(cross < chroma_similarity(&x, &x).unwrap());
        assert!(cross < 0.5, "{cross}");
    }

    #[test]
    fn silence_is_undefined() {
        let s = Signal::silence(16000, 16000);
        assert!(matches!(chroma_similarity(&s, &s), Err(Error::UndefinedMetric(_))));
        assert!(matches!(cqt_pcc(&s, &s), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mismatched_durations_are_rejected() {
        let x = tone(440.0, 0.3, 1.0, 16000);
        let y = tone(440.0, 0.3, 1.1, 16000);
        assert!(chroma_similarity(&x, &y).is_err());
    }

    #[test]
    fn pcc_is_amplitude_invariant() {
        let x = melody(&[57.0, 69.0, 64.0]);
        assert_abs_diff_eq!(cqt_pcc(&x, &x.scaled(0.5)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_tones_pcc_matches_direct_formula() {
        let x = tone(110.0, 0.4, 1.0, 16000);
        let y = tone(1760.0, 0.4, 1.0, 16000);
        let a = cqt_default(&x).unwrap().mean_magnitudes();
        let b = cqt_default(&y).unwrap().mean_magnitudes();
        assert_eq!(a.len(), 84);
        // Textbook two-pass form.
        let n = 84.0;
        let ma: f64 = a.iter().sum::<f64>() / n;
        let mb: f64 = b.iter().sum::<f64>() / n;
        let cov: f64 = (0..84).map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / (n - 1.0);
        let sa = ((0..84).map(|i| (a[i] - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sb = ((0..84).map(|i| (b[i] - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let oracle = cov / (sa * sb);
        let got = cqt_pcc(&x, &y).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
        assert!(got < 0.1, "{got}");
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // Monotone transforms do not matter.
        let a = [0.1, 0.5, 0.2, 0.9];
        let b: Vec<f64> = a.iter().map(|x: &f64| x.exp()).collect();
        assert_abs_diff_eq!(spearman(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_variance_is_unbiased() {
        let s = gaussian_stats_raw(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.covariance[(0, 0)], 2.0);
        assert!(!gaussian_stats(&[vec![0.0], vec![2.0]]).unwrap().regularized);
    }

    #[test]
    fn identical_points_trigger_regularisation() {
        let s = gaussian_stats(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(s.regularized);
        assert_eq!(s.covariance[(0, 0)], COV_EPSILON);
        assert_eq!(s.covariance[(0, 1)], 0.0);
        assert!(gaussian_stats(&[vec![1.0]]).is_err());
    }

    #[test]
    fn covariance_matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let s = gaussian_stats_raw(&pts).unwrap();
        let n = pts.len() as f64;
        let mu: Vec<f64> = (0..3).map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / n).collect();
        for i in 0..3 {
            assert_abs_diff_eq!(s.mean[i], mu[i], epsilon = 1e-12);
            for j in 0..3 {
                let mut c = 0.0;
                for p in &pts {
                    c += (p[i] - mu[i]) * (p[j] - mu[j]);
                }
                assert_abs_diff_eq!(s.covariance[(i, j)], c / (n - 1.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn frechet_analytic_cases() {
        let a = stats_1d(0.0, 1.0);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(frechet_distance(&a, &stats_1d(1.0, 1.0)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(frechet_distance(&a, &stats_1d(0.0, 4.0)).unwrap(), 1.0, epsilon = 1e-12);
        let three = GaussianStats {
            mean: DVector::zeros(3),
            covariance: DMatrix::identity(3, 3),
            count: 10,
            regularized: false,
        };
        assert!(frechet_distance(&a, &three).is_err());
    }

    #[test]
    fn regularisation_barely_moves_fad() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut draw = |shift: f64| -> Vec<Vec<f64>> {
            (0..40)
                .map(|_| (0..4).map(|_| shift + rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let (pa, pb) = (draw(0.0), draw(0.3));
        let (a, b) = (gaussian_stats_raw(&pa).unwrap(), gaussian_stats_raw(&pb).unwrap());
        let mut ar = a.clone();
        let mut br = b.clone();
        for i in 0..4 {
            ar.covariance[(i, i)] += COV_EPSILON;
            br.covariance[(i, i)] += COV_EPSILON;
        }
        let gap = (frechet_distance(&a, &b).unwrap() - frechet_distance(&ar, &br).unwrap()).abs();
        assert!(gap <= 10.0 * COV_EPSILON * 4.0, "{gap}");
    }

    #[test]
    fn embedding_shifts_by_log_gain() {
        let x = melody(&[60.0, 67.0, 64.0]);
        let g: f64 = 0.5;
        let a = embed_toy(&x).unwrap();
        let b = embed_toy(&x.scaled(g)).unwrap();
        assert_eq!(a.len(), EMBED_DIM);
        // Bands that never touch the log floor obey the identity exactly.
        let mel = mel_spectrogram(&x.scaled(g), &MelParams::default()).unwrap();
        for band in 0..16 {
            if mel.column(band).iter().all(|&v| v > crate::dsp::LOG_FLOOR.ln()) {
                assert_abs_diff_eq!(b[band] - a[band], (g * g).ln(), epsilon = 1e-9);
                assert_abs_diff_eq!(b[16 + band], a[16 + band], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn alignment_identities() {
        let x = melody(&[60.0, 64.0]);
        let e = embed_toy(&x).unwrap();
        assert_abs_diff_eq!(alignment(&x, &e).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn prototypes_are_class_means() {
        let p = class_prototypes(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 4.0]),
            ("a", vec![3.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(p["a"], vec![2.0, 1.0]);
        assert_eq!(p["b"], vec![0.0, 4.0]);
    }

    #[test]
    fn csv_has_fixed_header_and_summary() {
        let mut buf = Vec::new();
        let row = MetricRow {
            clip_id: "c0".into(),
            source_class: "bright".into(),
            target_class: "bowed".into(),
            strategy: "kv".into(),
            n: Some(4),
            m: Some(2),
            chroma_sim: Some(0.9),
            cqt_pcc: Some(0.8),
            align_source: Some(0.7),
            align_target: Some(0.6),
            fad: None,
        };
        write_metric_rows(&mut buf, &[row, MetricRow::summary(1.5)], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRIC_HEADER.join(","));
        assert_eq!(lines[1], "c0,bright,bowed,kv,4,2,0.9,0.8,0.7,0.6,");
        assert_eq!(lines[2], "summary,,,,,,,,,,1.5");
    }

    proptest! {
        #[test]
        fn frechet_symmetric_nonnegative(
            xs in prop::collection::vec(prop::collection::vec(-3f64..3.0, 3), 5..12),
            ys in prop::collection::vec(prop::collection::vec(-3f64..3.0, 3), 5..12),
        ) {
            let a = gaussian_stats(&xs).unwrap();
            let b = gaussian_stats(&ys).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
            prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
        }

        #[test]
        fn pearson_symmetric_and_bounded(
            pairs in prop::collection::vec((-5f64..5.0, -5f64..5.0), 3..30)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let (Ok(r), Ok(s)) = (pearson(&a, &b), pearson(&b, &a)) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - s).abs() < 1e-12);
            }
        }
    }
}
