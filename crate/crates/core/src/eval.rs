//! Metrics: per-timestep denoising error, noise-level confusion, likelihood,
//! classification quality, and a two-sample energy-distance test.
//!
//! Every function draws from its own seed. Draws for timestep `t` come from
//! stream `t` of that seed, so two denoisers evaluated with the same seed see
//! identical `(x0, ε)` pairs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cdm::{log_likelihood, predict_eps};
use crate::classifier::NoiseClassifier;
use crate::data::DataSource;
use crate::error::{CdmError, Result};
use crate::net::{argmax, log_softmax};
use crate::oracle::{oracle_denoiser, DiffusedFamily};
use crate::schedule::NoiseSchedule;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn require_positive(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(CdmError::InvalidConfig(format!(
            "{what} must be at least 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsePoint {
    pub t: usize,
    pub mse: f64,
    pub stderr: f64,
}

/// `mean ‖ε − ε̂‖² / d` at each `t` in `ts` over `n` fresh draws, with any
/// batched noise predictor.
pub fn denoising_mse_curve_with<F>(
    schedule: &NoiseSchedule,
    data: &DataSource,
    ts: &[usize],
    n: usize,
    seed: u64,
    mut predict: F,
) -> Result<Vec<MsePoint>>
where
    F: FnMut(ArrayView2<f64>, usize) -> Result<Array2<f64>>,
{
    require_positive(n, "n per timestep")?;
    let d = data.dim();
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        schedule.check_timestep(t)?;
        let mut rng = stream(seed, t as u64);
        let x0 = data.sample(&mut rng, n);
        let eps = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        let xt = schedule.forward_diffuse_batch(x0.view(), &vec![t; n], eps.view())?;
        let eps_hat = predict(xt.view(), t)?;
        let per_row: Vec<f64> = (&eps - &eps_hat)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r) / d as f64)
            .collect();
        let (mse, stderr) = mean_and_stderr(&per_row);
        out.push(MsePoint { t, mse, stderr });
    }
    Ok(out)
}

/// Denoising error of the classifier-derived noise prediction at every
/// `t ∈ 1..=T`.
pub fn denoising_mse_per_t<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    seed: u64,
) -> Result<Vec<MsePoint>> {
    let ts: Vec<usize> = (1..=schedule.steps()).collect();
    denoising_mse_at(clf, schedule, data, &ts, n, seed)
}

pub fn denoising_mse_at<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    ts: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<MsePoint>> {
    denoising_mse_curve_with(schedule, data, ts, n, seed, |x, t| {
        predict_eps(clf, schedule, x, t)
    })
}

/// The same curve for the exact posterior-mean denoiser of a synthetic
/// source.
pub fn oracle_mse_at<F: DiffusedFamily>(
    family: &F,
    data: &DataSource,
    ts: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<MsePoint>> {
    denoising_mse_curve_with(family.schedule(), data, ts, n, seed, |x, t| {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&oracle_denoiser(family, row, t)?);
        }
        Ok(out)
    })
}

/// Mean of `a(t) / b(t)` and ratio of the means.
pub fn mse_ratio(a: &[MsePoint], b: &[MsePoint]) -> (f64, f64) {
    let mean_ratio = a.iter().zip(b).map(|(x, y)| x.mse / y.mse).sum::<f64>() / a.len() as f64;
    let sa: f64 = a.iter().map(|p| p.mse).sum();
    let sb: f64 = b.iter().map(|p| p.mse).sum();
    (mean_ratio, sa / sb)
}

/// Draws `n` diffused samples per timestep and groups the argmax
/// predictions.
fn per_t_predictions<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    require_positive(n, "n per timestep")?;
    let d = data.dim();
    let mut out = Vec::with_capacity(schedule.num_classes());
    for t in 0..schedule.num_classes() {
        let mut rng = stream(seed, t as u64);
        let x0 = data.sample(&mut rng, n);
        let eps = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        let xt = schedule.forward_diffuse_batch(x0.view(), &vec![t; n], eps.view())?;
        let logits = clf.logits(xt.view())?;
        out.push(logits.rows().into_iter().map(argmax).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    /// Inclusive class ranges `[lo, hi]` per bin.
    pub bins: Vec<(usize, usize)>,
    /// `P(predicted bin | true bin)`, rows sum to one.
    pub matrix: Array2<f64>,
}

impl ConfusionMatrix {
    /// Shannon entropy (nats) of each row.
    pub fn row_entropies(&self) -> Vec<f64> {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| {
                -r.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|p| p * p.ln())
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Equal-width partition of `0..num_classes` into `bins` ranges.
pub fn class_bins(num_classes: usize, bins: usize) -> Vec<(usize, usize)> {
    let bins = bins.clamp(1, num_classes);
    (0..bins)
        .map(|b| (b * num_classes / bins, (b + 1) * num_classes / bins - 1))
        .collect()
}

pub fn confusion_matrix<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let preds = per_t_predictions(clf, schedule, data, n, seed)?;
    let ranges = class_bins(schedule.num_classes(), bins);
    let bin_of = |c: usize| {
        ranges
            .iter()
            .position(|&(lo, hi)| lo <= c && c <= hi)
            .unwrap()
    };
    let nb = ranges.len();
    let mut m = Array2::<f64>::zeros((nb, nb));
    for (t, p) in preds.iter().enumerate() {
        let row = bin_of(t);
        for &c in p {
            m[[row, bin_of(c)]] += 1.0;
        }
    }
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(ConfusionMatrix {
        bins: ranges,
        matrix: m,
    })
}

/// Argmax accuracy at each class `0..=K`.
pub fn per_t_accuracy<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let preds = per_t_predictions(clf, schedule, data, n, seed)?;
    Ok(preds
        .iter()
        .enumerate()
        .map(|(t, p)| p.iter().filter(|&&c| c == t).count() as f64 / n as f64)
        .collect())
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NllSummary {
    pub n: usize,
    pub t: usize,
    /// Mean negative log-likelihood over points, in nats.
    pub nats: f64,
    pub nats_stderr: f64,
    /// `nats / d`.
    pub nats_per_dim: f64,
    pub bits_per_dim: f64,
    pub bits_per_dim_stderr: f64,
}

/// Mean NLL of the given points at timestep `t`.
pub fn nll_bits_per_dim<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<NllSummary> {
    require_positive(x.nrows(), "number of points")?;
    let ll = log_likelihood(clf, schedule, x, t)?;
    let nats: Vec<f64> = ll.iter().map(|l| -l.nats).collect();
    let (mean, se) = mean_and_stderr(&nats);
    let d = x.ncols() as f64;
    let to_bits = 1.0 / (d * std::f64::consts::LN_2);
    Ok(NllSummary {
        n: x.nrows(),
        t,
        nats: mean,
        nats_stderr: se,
        nats_per_dim: mean / d,
        bits_per_dim: mean * to_bits,
        bits_per_dim_stderr: se * to_bits,
    })
}

/// [`nll_bits_per_dim`] on `n` fresh draws from a source.
pub fn nll_on_source<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<NllSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = data.sample(&mut rng, n);
    nll_bits_per_dim(clf, schedule, x.view(), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Mean cross-entropy in nats.
    pub ce: f64,
    /// `ln(num_classes)`, the uniform classifier's cross-entropy.
    pub uniform_ce: f64,
}

/// Accuracy and cross-entropy on `n` diffused samples with uniform `t`.
pub fn classification_metrics<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    n: usize,
    seed: u64,
) -> Result<ClassificationMetrics> {
    require_positive(n, "number of samples")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = data.sample(&mut rng, n);
    let ts: Vec<usize> = (0..n).map(|_| schedule.sample_timestep(&mut rng)).collect();
    let eps = Array2::from_shape_simple_fn(x0.raw_dim(), || StandardNormal.sample(&mut rng));
    let xt = schedule.forward_diffuse_batch(x0.view(), &ts, eps.view())?;
    let logits = clf.logits(xt.view())?;
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(&ts) {
        if argmax(row) == t {
            correct += 1;
        }
        ce -= log_softmax(row)[t];
    }
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / n as f64,
        ce: ce / n as f64,
        uniform_ce: (schedule.num_classes() as f64).ln(),
    })
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn pair_sum(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    for ra in a.rows() {
        let mut s = 0.0;
        for rb in b.rows() {
            s += dist(ra, rb);
        }
        total += s;
    }
    total
}

fn check_pair(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(CdmError::InvalidConfig(
            "energy distance needs two nonempty sets".into(),
        ));
    }
    if a.ncols() != b.ncols() {
        return Err(CdmError::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    Ok(())
}

/// Orders two sets canonically so the statistic is exactly symmetric.
fn canonical<'a>(
    a: ArrayView2<'a, f64>,
    b: ArrayView2<'a, f64>,
) -> (ArrayView2<'a, f64>, ArrayView2<'a, f64>) {
    let key = |m: &ArrayView2<f64>| (m.nrows(), m.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    if key(&a) <= key(&b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// `2 E‖a − b‖ − E‖a − a′‖ − E‖b − b′‖` with all expectations taken over
/// every pair (V-statistics), which keeps it nonnegative and zero for
/// identical sets.
pub fn energy_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_pair(&a, &b)?;
    let (a, b) = canonical(a, b);
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let ab = pair_sum(a, b) / (n * m);
    let aa = pair_sum(a, a) / (n * n);
    let bb = pair_sum(b, b) / (m * m);
    Ok((2.0 * ab - aa - bb).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    /// 99th percentile of the permutation null.
    pub null_q99: f64,
    pub permutations: usize,
}

/// Permutation test of the energy distance between `a` and `b`.
///
/// Row sums of the pooled distance matrix are computed once; each shuffle
/// then costs `O(m²)` in the smaller group size `m`, because the other two
/// pair sums follow from the group's row sums and the grand total.
pub fn energy_permutation_test(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_pair(&a, &b)?;
    require_positive(permutations, "permutations")?;
    let (small, large) = if a.nrows() <= b.nrows() {
        (a, b)
    } else {
        (b, a)
    };
    let m = small.nrows();
    let pooled = ndarray::concatenate(Axis(0), &[small, large]).expect("same width");
    let total_n = pooled.nrows();
    let rowsum: Array1<f64> = pooled
        .rows()
        .into_iter()
        .map(|r| pooled.rows().into_iter().map(|q| dist(r, q)).sum::<f64>())
        .collect();
    let grand: f64 = rowsum.sum();
    let (fm, fl) = (m as f64, (total_n - m) as f64);
    let stat_for = |idx: &[usize]| -> f64 {
        let mut within = 0.0;
        for &i in idx {
            for &j in idx {
                within += dist(pooled.row(i), pooled.row(j));
            }
        }
        let touching: f64 = idx.iter().map(|&i| rowsum[i]).sum();
        let cross = touching - within;
        let other = grand - within - 2.0 * cross;
        2.0 * cross / (fm * fl) - within / (fm * fm) - other / (fl * fl)
    };
    let observed: Vec<usize> = (0..m).collect();
    let statistic = stat_for(&observed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        let idx = sample_indices(&mut rng, total_n, m).into_vec();
        null.push(stat_for(&idx));
    }
    let exceed = null.iter().filter(|&&s| s >= statistic).count();
    null.sort_by(f64::total_cmp);
    let q = ((0.99 * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    Ok(PermutationTest {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        null_q99: null[q],
        permutations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LogitProfile {
    /// Timestep used to noise the input.
    pub t: usize,
    pub log_posterior: Vec<f64>,
    /// Whether the log-posterior falls monotonically on both sides of its
    /// peak. Reported only.
    pub unimodal: bool,
}

/// Log-posterior over classes for one clean draw noised at each `ts`.
pub fn logit_profiles<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    data: &DataSource,
    ts: &[usize],
    seed: u64,
) -> Result<Vec<LogitProfile>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = data.sample(&mut rng, 1);
    let mut out = Vec::new();
    for &t in ts {
        let eps: Array1<f64> = (0..data.dim())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let xt = schedule.forward_diffuse(x0.row(0), t, eps.view())?;
        let logits = clf.logits(xt.view().insert_axis(Axis(0)))?;
        let lp = log_softmax(logits.row(0)).to_vec();
        let peak = argmax(ArrayView1::from(&lp[..]));
        let unimodal = lp[..=peak].windows(2).all(|w| w[0] <= w[1])
            && lp[peak..].windows(2).all(|w| w[0] >= w[1]);
        out.push(LogitProfile {
            t,
            log_posterior: lp,
            unimodal,
        });
    }
    Ok(out)
}

/// Draws `n` points at random from `x` without replacement.
pub fn subsample<R: Rng + ?Sized>(x: ArrayView2<f64>, n: usize, rng: &mut R) -> Array2<f64> {
    let idx = sample_indices(rng, x.nrows(), n.min(x.nrows())).into_vec();
    x.select(Axis(0), &idx)
}
