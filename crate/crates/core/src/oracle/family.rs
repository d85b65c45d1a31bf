use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::density::{log_sum_exp, GmmDensity, UniformBoxDensity};
use crate::classifier::NoiseClassifier;
use crate::error::{CdmError, Result};
use crate::schedule::NoiseSchedule;

/// The family of densities `p_{x_t}` a data density induces under a
/// schedule, one per class.
pub trait DiffusedFamily {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &NoiseSchedule;

    fn log_density(&self, t: usize, x: ArrayView1<f64>) -> f64 {
        self.log_density_and_score(t, x).0
    }

    /// `log p_{x_t}(x)` and `∇_x log p_{x_t}(x)`.
    fn log_density_and_score(&self, t: usize, x: ArrayView1<f64>) -> (f64, Array1<f64>);
}

/// Gaussian-mixture data with every diffused mixture precomputed.
#[derive(Debug, Clone)]
pub struct GmmFamily {
    gmm: GmmDensity,
    schedule: NoiseSchedule,
    per_class: Vec<GmmDensity>,
}

impl GmmFamily {
    pub fn new(gmm: GmmDensity, schedule: NoiseSchedule) -> Self {
        let per_class = (0..schedule.num_classes())
            .map(|t| gmm.diffused(schedule.signal_coef(t), schedule.noise_coef(t)))
            .collect();
        Self {
            gmm,
            schedule,
            per_class,
        }
    }

    pub fn data(&self) -> &GmmDensity {
        &self.gmm
    }

    pub fn at(&self, t: usize) -> &GmmDensity {
        &self.per_class[t]
    }
}

impl DiffusedFamily for GmmFamily {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn log_density(&self, t: usize, x: ArrayView1<f64>) -> f64 {
        self.per_class[t].logpdf(x)
    }

    fn log_density_and_score(&self, t: usize, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        self.per_class[t].logpdf_and_score(x)
    }
}

/// Uniform-box data; diffused densities are products of Gaussian-smoothed
/// intervals.
#[derive(Debug, Clone)]
pub struct BoxFamily {
    density: UniformBoxDensity,
    schedule: NoiseSchedule,
}

impl BoxFamily {
    pub fn new(density: UniformBoxDensity, schedule: NoiseSchedule) -> Self {
        Self { density, schedule }
    }

    pub fn data(&self) -> &UniformBoxDensity {
        &self.density
    }
}

impl DiffusedFamily for BoxFamily {
    fn dim(&self) -> usize {
        self.density.dim
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn log_density_and_score(&self, t: usize, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        self.density.diffused_logpdf_and_score(
            self.schedule.signal_coef(t),
            self.schedule.noise_coef(t),
            x,
        )
    }
}

/// Exact density of `x_t`: the mixture with means `s_t μ_k` and
/// covariances `s_t² Σ_k + n_t² I`.
pub fn diffused_gmm(gmm: &GmmDensity, schedule: &NoiseSchedule, t: usize) -> Result<GmmDensity> {
    schedule.check_timestep(t)?;
    Ok(gmm.diffused(schedule.signal_coef(t), schedule.noise_coef(t)))
}

/// `p(t | x)` for every class under a uniform prior, computed in log space.
pub fn oracle_posterior<F: DiffusedFamily>(family: &F, x: ArrayView1<f64>) -> Array1<f64> {
    OracleClassifier::uniform(family).posterior(x)
}

/// `E[ε_t | x_t = x] = −n_t ∇ log p_{x_t}(x)` (Tweedie), `n_t` the noise
/// coefficient. Undefined at the clean class.
pub fn oracle_denoiser<F: DiffusedFamily>(
    family: &F,
    x: ArrayView1<f64>,
    t: usize,
) -> Result<Array1<f64>> {
    let sched = family.schedule();
    sched.check_timestep(t)?;
    if t == 0 {
        return Err(CdmError::Unsupported(
            "the clean class carries no noise to predict".into(),
        ));
    }
    let (_, score) = family.log_density_and_score(t, x);
    Ok(score * (-sched.noise_coef(t)))
}

/// The Bayes-optimal noise-level classifier for a known data density.
#[derive(Debug, Clone)]
pub struct OracleClassifier<F> {
    family: F,
    log_prior: Vec<f64>,
}

impl<F: DiffusedFamily> OracleClassifier<F> {
    pub fn uniform(family: F) -> Self {
        let k = family.schedule().num_classes();
        Self {
            family,
            log_prior: vec![-(k as f64).ln(); k],
        }
    }

    /// Prior `p_t` given as (unnormalized) positive weights per class.
    pub fn with_prior(family: F, weights: &[f64]) -> Result<Self> {
        let k = family.schedule().num_classes();
        if weights.len() != k {
            return Err(CdmError::DimensionMismatch {
                expected: k,
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(CdmError::InvalidConfig(
                "prior weights must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            family,
            log_prior: weights.iter().map(|w| (w / total).ln()).collect(),
        })
    }

    pub fn family(&self) -> &F {
        &self.family
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub fn log_posterior(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let joint: Vec<f64> = self
            .log_prior
            .iter()
            .enumerate()
            .map(|(t, lp)| lp + self.family.log_density(t, x))
            .collect();
        let lse = log_sum_exp(&joint);
        joint.into_iter().map(|v| v - lse).collect()
    }

    pub fn posterior(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.log_posterior(x).mapv(f64::exp)
    }

    /// `∇_x log p(t | x) = ∇ log p_t(x) − Σ_s p(s|x) ∇ log p_s(x)` for
    /// every class, one row per class.
    pub fn log_posterior_gradients(&self, x: ArrayView1<f64>) -> Array2<f64> {
        let k = self.log_prior.len();
        let d = self.family.dim();
        let mut joint = Vec::with_capacity(k);
        let mut scores = Array2::zeros((k, d));
        for t in 0..k {
            let (lp, s) = self.family.log_density_and_score(t, x);
            joint.push(lp + self.log_prior[t]);
            scores.row_mut(t).assign(&s);
        }
        let lse = log_sum_exp(&joint);
        let mut mean = Array1::<f64>::zeros(d);
        for t in 0..k {
            let w = (joint[t] - lse).exp();
            if w > 0.0 {
                mean.scaled_add(w, &scores.row(t));
            }
        }
        for mut row in scores.rows_mut() {
            row -= &mean;
        }
        scores
    }
}

impl<F: DiffusedFamily> NoiseClassifier for OracleClassifier<F> {
    fn input_dim(&self) -> usize {
        self.family.dim()
    }

    fn num_classes(&self) -> usize {
        self.log_prior.len()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.log_prior.len()));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.log_posterior(row));
        }
        Ok(out)
    }

    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let k = self.noise_class_index();
        let mut values = Array1::zeros(x.nrows());
        let mut grads = Array2::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let t = ts[i];
            self.family.schedule().check_timestep(t)?;
            let (lk, sk) = self.family.log_density_and_score(k, row);
            let (lt, st) = self.family.log_density_and_score(t, row);
            values[i] = (lk + self.log_prior[k]) - (lt + self.log_prior[t]);
            grads.row_mut(i).assign(&(sk - st));
        }
        Ok((values, grads))
    }
}

impl<F: DiffusedFamily> DiffusedFamily for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        (**self).schedule()
    }

    fn log_density(&self, t: usize, x: ArrayView1<f64>) -> f64 {
        (**self).log_density(t, x)
    }

    fn log_density_and_score(&self, t: usize, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        (**self).log_density_and_score(t, x)
    }
}
