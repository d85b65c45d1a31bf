//! Generation: ancestral DDPM sampling, deterministic strided DDIM, and Euler
//! integration of the linear-path velocity field.
//!
//! Sample `i` draws all of its randomness from ChaCha8 seeded with the
//! config seed on stream `i`, so results do not depend on how rows are
//! batched.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cdm::{predict_eps, reverse_step, vector_field_ot, SigmaChoice};
use crate::classifier::NoiseClassifier;
use crate::data::write_matrix_csv;
use crate::error::{CdmError, Result};
use crate::schedule::{NoiseSchedule, ScheduleKind};

/// Rows advanced together through the network.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    OtEuler,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            "ot_euler" => Ok(Self::OtEuler),
            other => Err(CdmError::InvalidConfig(format!(
                "unknown sampler '{other}' (expected ddpm, ddim or ot_euler)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub sampler: SamplerKind,
    /// Timesteps visited; all `T` when absent. DDPM always uses all of them.
    pub steps: Option<usize>,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub sigma: SigmaChoice,
}

impl SamplerConfig {
    pub fn new(sampler: SamplerKind, n_samples: usize, seed: u64) -> Self {
        Self {
            sampler,
            steps: None,
            n_samples,
            seed,
            sigma: SigmaChoice::Beta,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    /// Checks the config against a schedule and returns the step count.
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<usize> {
        if self.n_samples == 0 {
            return Err(CdmError::InvalidConfig(
                "n_samples must be at least 1".into(),
            ));
        }
        let big_t = schedule.steps();
        let steps = self.steps.unwrap_or(big_t);
        if steps == 0 || steps > big_t {
            return Err(CdmError::InvalidConfig(format!(
                "steps must lie in 1..={big_t}, got {steps}"
            )));
        }
        let ot = schedule.kind() == ScheduleKind::Ot;
        match self.sampler {
            SamplerKind::Ddpm | SamplerKind::Ddim if ot => Err(CdmError::InvalidConfig(format!(
                "{:?} sampling needs a variance-preserving schedule; use ot_euler for ot checkpoints",
                self.sampler
            ))),
            SamplerKind::OtEuler if !ot => Err(CdmError::InvalidConfig(format!(
                "ot_euler needs an ot schedule, this one is {}",
                schedule.kind()
            ))),
            SamplerKind::Ddpm if steps != big_t => Err(CdmError::InvalidConfig(
                "ddpm visits every timestep; leave steps unset or equal to T".into(),
            )),
            _ => Ok(steps),
        }
    }
}

/// Per-sample random streams.
pub struct Streams {
    rngs: Vec<ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64, first: usize, n: usize) -> Self {
        let rngs = (first..first + n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        Self { rngs }
    }

    pub fn normal(&mut self, dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.rngs.len(), dim));
        for (mut row, rng) in out.rows_mut().into_iter().zip(&mut self.rngs) {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        }
        out
    }
}

fn check_finite(x: &Array2<f64>, sampler: &str, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CdmError::non_finite(format!(
            "{sampler} state after the step at t={t}"
        )))
    }
}

/// Uniform stride over `1..=T` including both endpoints, descending.
pub fn ddim_timesteps(big_t: usize, steps: usize) -> Vec<usize> {
    if steps <= 1 {
        return vec![big_t];
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|k| 1 + ((k * (big_t - 1)) as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Integer grid `round(T (steps − k) / steps)` for `k = 0..=steps`.
pub fn ot_grid(big_t: usize, steps: usize) -> Vec<usize> {
    (0..=steps)
        .map(|k| ((big_t * (steps - k)) as f64 / steps as f64).round() as usize)
        .collect()
}

pub fn sample<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Array2<f64>> {
    let steps = cfg.validate(schedule)?;
    let d = clf.input_dim();
    let mut out = Array2::zeros((cfg.n_samples, d));
    let mut start = 0;
    while start < cfg.n_samples {
        let n = CHUNK.min(cfg.n_samples - start);
        let mut streams = Streams::new(cfg.seed, start, n);
        let x_init = streams.normal(d);
        let x = match cfg.sampler {
            SamplerKind::Ddpm => ddpm_from(clf, schedule, x_init, cfg.sigma, Some(&mut streams))?,
            SamplerKind::Ddim => ddim_from(clf, schedule, x_init, steps)?,
            SamplerKind::OtEuler => ot_euler_from(clf, schedule, x_init, steps)?,
        };
        out.slice_mut(s![start..start + n, ..]).assign(&x);
        start += n;
    }
    Ok(out)
}

pub fn ddpm_sample<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Array2<f64>> {
    sample(
        clf,
        schedule,
        &SamplerConfig {
            sampler: SamplerKind::Ddpm,
            ..*cfg
        },
    )
}

pub fn ddim_sample<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Array2<f64>> {
    sample(
        clf,
        schedule,
        &SamplerConfig {
            sampler: SamplerKind::Ddim,
            ..*cfg
        },
    )
}

pub fn ot_euler_sample<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Array2<f64>> {
    sample(
        clf,
        schedule,
        &SamplerConfig {
            sampler: SamplerKind::OtEuler,
            ..*cfg
        },
    )
}

/// Ancestral sampling from `x_T`. With `streams = None` every `σ_t z` term
/// is dropped.
pub fn ddpm_from<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    mut x: Array2<f64>,
    sigma: SigmaChoice,
    mut streams: Option<&mut Streams>,
) -> Result<Array2<f64>> {
    if !schedule.is_variance_preserving() {
        return Err(CdmError::Unsupported(
            "ddpm sampling on an ot schedule".into(),
        ));
    }
    let d = x.ncols();
    for t in (1..=schedule.steps()).rev() {
        let z = match streams.as_deref_mut() {
            Some(s) if t > 1 => Some(s.normal(d)),
            _ => None,
        };
        let sig = sigma.sigma(schedule, t)?;
        x = reverse_step(
            clf,
            schedule,
            x.view(),
            t,
            z.as_ref().map(|z| z.view()),
            sig,
        )?;
        check_finite(&x, "ddpm", t)?;
    }
    Ok(x)
}

/// Deterministic (η = 0) DDIM from `x_T` over [`ddim_timesteps`].
pub fn ddim_from<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    mut x: Array2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    if !schedule.is_variance_preserving() {
        return Err(CdmError::Unsupported(
            "ddim sampling on an ot schedule".into(),
        ));
    }
    let ts = ddim_timesteps(schedule.steps(), steps);
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps = predict_eps(clf, schedule, x.view(), t)?;
        let (a_t, n_t) = (schedule.signal_coef(t), schedule.noise_coef(t));
        let (a_p, n_p) = (schedule.signal_coef(prev), schedule.noise_coef(prev));
        let x0 = (&x - &(&eps * n_t)) / a_t;
        x = x0 * a_p + eps * n_p;
        check_finite(&x, "ddim", t)?;
    }
    Ok(x)
}

/// Euler integration of the velocity field from `x_T` down to `t = 0` on
/// [`ot_grid`]. The field is singular at `T`, so the first step evaluates it
/// at `T − 1`.
pub fn ot_euler_from<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    mut x: Array2<f64>,
    steps: usize,
) -> Result<Array2<f64>> {
    let big_t = schedule.steps();
    let grid = ot_grid(big_t, steps);
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let v = vector_field_ot(clf, schedule, x.view(), t.min(big_t - 1))?;
        x.scaled_add(-((t - next) as f64), &v);
        check_finite(&x, "ot_euler", t)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Csv,
    /// Little-endian `f64`, row-major.
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: [usize; 2],
    pub format: SampleFormat,
    pub dtype: String,
    pub byte_order: String,
    pub sampler: SamplerConfig,
    /// Classifier-gradient evaluations per sample.
    pub nfe_per_sample: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes samples plus a `<path>.json` sidecar describing them.
pub fn write_samples(
    path: &Path,
    x: &Array2<f64>,
    format: SampleFormat,
    cfg: &SamplerConfig,
    nfe_per_sample: usize,
) -> Result<PathBuf> {
    match format {
        SampleFormat::Csv => write_matrix_csv(path, x.view())?,
        SampleFormat::Raw => {
            let mut bytes = Vec::with_capacity(8 * x.len());
            for v in x.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(path, bytes).map_err(|e| CdmError::io(path, e))?;
        }
    }
    let sidecar = Sidecar {
        shape: [x.nrows(), x.ncols()],
        format,
        dtype: "f64".into(),
        byte_order: "little".into(),
        sampler: *cfg,
        nfe_per_sample,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&side, json).map_err(|e| CdmError::io(&side, e))?;
    Ok(side)
}

/// Reads a raw block using its sidecar.
pub fn read_raw_samples(path: &Path) -> Result<Array2<f64>> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| CdmError::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| CdmError::Parse {
        path: side.clone(),
        message: e.to_string(),
    })?;
    let bytes = std::fs::read(path).map_err(|e| CdmError::io(path, e))?;
    let [n, d] = meta.shape;
    if bytes.len() != 8 * n * d {
        return Err(CdmError::Parse {
            path: path.to_path_buf(),
            message: format!(
                "expected {} bytes for shape {n}x{d}, found {}",
                8 * n * d,
                bytes.len()
            ),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n, d), values).expect("shape checked"))
}
