//! Noise schedules over the augmented timestep grid.
//!
//! Variance-preserving schedules (`ddpm_linear`, `tre_uniform`) cover the
//! classes `0..=T+1`: class 0 is clean data (ᾱ = 1) and class `T+1` is pure
//! Gaussian noise (ᾱ = 0). The `ot` schedule interpolates linearly between
//! data and noise over `0..=T`, so its noise class is `T`.
//!
//! Every schedule is stored as a pair of coefficients per class,
//! `x_t = signal[t] * x_0 + noise[t] * eps`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CdmError, Result};

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    DdpmLinear,
    TreUniform,
    Ot,
}

impl ScheduleKind {
    pub fn is_variance_preserving(self) -> bool {
        !matches!(self, ScheduleKind::Ot)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpm_linear" => Ok(ScheduleKind::DdpmLinear),
            "tre_uniform" => Ok(ScheduleKind::TreUniform),
            "ot" => Ok(ScheduleKind::Ot),
            other => Err(CdmError::InvalidSchedule(format!("unknown kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::DdpmLinear => "ddpm_linear",
            ScheduleKind::TreUniform => "tre_uniform",
            ScheduleKind::Ot => "ot",
        })
    }
}

/// Serializable schedule descriptor. The coefficient tables are always
/// rebuilt from this, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Number of interior diffusion steps `T`.
    pub steps: usize,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
}

fn default_beta_min() -> f64 {
    DEFAULT_BETA_MIN
}

fn default_beta_max() -> f64 {
    DEFAULT_BETA_MAX
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, steps: usize) -> Self {
        Self {
            kind,
            steps,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }

    pub fn ddpm_linear(steps: usize, beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: ScheduleKind::DdpmLinear,
            steps,
            beta_min,
            beta_max,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(*self)
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    /// ᾱ per class for variance-preserving kinds; empty for `ot`.
    alpha_bar: Vec<f64>,
    signal: Vec<f64>,
    noise: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        let t_max = spec.steps;
        if t_max == 0 {
            return Err(CdmError::InvalidSchedule("T must be at least 1".into()));
        }
        match spec.kind {
            ScheduleKind::DdpmLinear => {
                let (lo, hi) = (spec.beta_min, spec.beta_max);
                if !(lo >= 0.0 && lo <= hi && hi < 1.0) {
                    return Err(CdmError::InvalidSchedule(format!(
                        "beta range must satisfy 0 <= beta_min <= beta_max < 1, got [{lo}, {hi}]"
                    )));
                }
                let betas: Vec<f64> = (1..=t_max)
                    .map(|t| {
                        if t_max == 1 {
                            lo
                        } else {
                            lo + (hi - lo) * (t - 1) as f64 / (t_max - 1) as f64
                        }
                    })
                    .collect();
                let mut alpha_bar = Vec::with_capacity(t_max + 2);
                alpha_bar.push(1.0);
                let mut prod = 1.0;
                let mut log_sum = 0.0;
                for &b in &betas {
                    prod *= 1.0 - b;
                    log_sum += (-b).ln_1p();
                    let via_log = log_sum.exp();
                    if (prod - via_log).abs() > 1e-12 * prod.max(f64::MIN_POSITIVE) {
                        return Err(CdmError::InvalidSchedule(format!(
                            "cumulative product {prod} disagrees with log-space value {via_log}"
                        )));
                    }
                    alpha_bar.push(prod);
                }
                alpha_bar.push(0.0);
                Self::from_alpha_bar(spec, alpha_bar)
            }
            ScheduleKind::TreUniform => {
                let denom = (t_max + 1) as f64;
                let alpha_bar = (0..=t_max + 1)
                    .map(|t| {
                        let s = t as f64 / denom;
                        1.0 - s * s
                    })
                    .collect();
                let mut sched = Self::from_alpha_bar(spec, alpha_bar)?;
                // Keep the noise coefficient exact rather than via sqrt(1 - ᾱ).
                for (t, n) in sched.noise.iter_mut().enumerate() {
                    *n = t as f64 / denom;
                }
                Ok(sched)
            }
            ScheduleKind::Ot => {
                let tf = t_max as f64;
                let signal = (0..=t_max).map(|t| (t_max - t) as f64 / tf).collect();
                let noise = (0..=t_max).map(|t| t as f64 / tf).collect();
                Ok(Self {
                    spec,
                    alpha_bar: Vec::new(),
                    signal,
                    noise,
                })
            }
        }
    }

    fn from_alpha_bar(spec: ScheduleSpec, alpha_bar: Vec<f64>) -> Result<Self> {
        let strictly = alpha_bar.windows(2).all(|w| w[1] < w[0]);
        let weakly = alpha_bar.windows(2).all(|w| w[1] <= w[0]);
        // A zero beta range is the one legitimate source of flat segments.
        let zero_rate = spec.kind == ScheduleKind::DdpmLinear && spec.beta_max == 0.0;
        if !(strictly || (zero_rate && weakly)) {
            return Err(CdmError::InvalidSchedule(
                "alpha_bar is not strictly decreasing".into(),
            ));
        }
        let signal = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let noise = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self {
            spec,
            alpha_bar,
            signal,
            noise,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn kind(&self) -> ScheduleKind {
        self.spec.kind
    }

    /// `T`, the number of interior diffusion steps.
    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    pub fn num_classes(&self) -> usize {
        self.signal.len()
    }

    pub fn noise_class_index(&self) -> usize {
        self.signal.len() - 1
    }

    pub fn is_variance_preserving(&self) -> bool {
        self.spec.kind.is_variance_preserving()
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.noise_class_index() {
            Err(CdmError::TimestepOutOfRange {
                t,
                max: self.noise_class_index(),
            })
        } else {
            Ok(())
        }
    }

    /// Coefficient on `x_0` at class `t`.
    pub fn signal_coef(&self, t: usize) -> f64 {
        self.signal[t]
    }

    /// Coefficient on `eps` at class `t`: √(1−ᾱ_t), or t/T for `ot`.
    pub fn noise_coef(&self, t: usize) -> f64 {
        self.noise[t]
    }

    pub fn alpha_bar_table(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// ᾱ_t for variance-preserving schedules; `None` for `ot`.
    pub fn alpha_bar(&self, t: usize) -> Option<f64> {
        self.alpha_bar.get(t).copied()
    }

    fn require_interior(&self, t: usize) -> Result<()> {
        if !self.is_variance_preserving() {
            return Err(CdmError::Unsupported(
                "per-step rates are undefined for the ot schedule".into(),
            ));
        }
        if t == 0 || t > self.spec.steps {
            return Err(CdmError::TimestepOutOfRange {
                t,
                max: self.spec.steps,
            });
        }
        Ok(())
    }

    /// α_t = ᾱ_t / ᾱ_{t−1}, defined for interior steps `1..=T` only.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.require_interior(t)?;
        Ok(self.alpha_bar[t] / self.alpha_bar[t - 1])
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.alpha(t)?)
    }

    /// Posterior variance β̃_t = (1−ᾱ_{t−1}) / (1−ᾱ_t) · β_t.
    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        let beta = self.beta(t)?;
        let denom = 1.0 - self.alpha_bar[t];
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((1.0 - self.alpha_bar[t - 1]) / denom * beta)
    }

    /// `signal[t] * x0 + noise[t] * eps` for a single vector.
    pub fn forward_diffuse(
        &self,
        x0: ArrayView1<f64>,
        t: usize,
        eps: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.check_timestep(t)?;
        if x0.len() != eps.len() {
            return Err(CdmError::DimensionMismatch {
                expected: x0.len(),
                got: eps.len(),
            });
        }
        let (a, b) = (self.signal[t], self.noise[t]);
        Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + b * e))
    }

    /// Row-wise forward diffusion with per-row timesteps.
    pub fn forward_diffuse_batch(
        &self,
        x0: ArrayView2<f64>,
        ts: &[usize],
        eps: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if x0.dim() != eps.dim() {
            return Err(CdmError::DimensionMismatch {
                expected: x0.ncols(),
                got: eps.ncols(),
            });
        }
        if ts.len() != x0.nrows() {
            return Err(CdmError::DimensionMismatch {
                expected: x0.nrows(),
                got: ts.len(),
            });
        }
        let mut out = Array2::zeros(x0.dim());
        for (i, &t) in ts.iter().enumerate() {
            self.check_timestep(t)?;
            let (a, b) = (self.signal[t], self.noise[t]);
            Zip::from(out.row_mut(i))
                .and(x0.row(i))
                .and(eps.row(i))
                .for_each(|o, &x, &e| *o = a * x + b * e);
        }
        Ok(out)
    }

    /// Uniform draw over all classes `0..=noise_class_index`.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_class(rng, self.num_classes())
    }
}

/// Uniform draw from `0..num_classes`.
pub fn sample_class<R: Rng + ?Sized>(rng: &mut R, num_classes: usize) -> usize {
    rng.random_range(0..num_classes)
}
