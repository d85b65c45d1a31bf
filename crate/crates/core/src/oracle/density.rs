//! Toy data densities with closed-form diffusion.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{CdmError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Smallest covariance eigenvalue scale allowed for a component.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

/// `log Σ exp(v)` with max-subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// `log N(x; 0, I)`.
pub fn std_normal_logpdf(x: ArrayView1<f64>) -> f64 {
    -0.5 * (x.len() as f64 * LN_2PI + x.dot(&x))
}

#[derive(Debug, Clone)]
struct Component {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `−½ (d ln 2π + ln|Σ|)`.
    log_norm: f64,
}

impl Component {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(CdmError::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(CdmError::InvalidDensity(
                "covariance is not symmetric".into(),
            ));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            CdmError::InvalidDensity("covariance is not positive definite".into())
        })?;
        let l = chol.l_dirty();
        let log_det: f64 = (0..d).map(|i| 2.0 * l[(i, i)].ln()).sum();
        Ok(Self {
            mean,
            cov,
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    /// Log density and `Σ⁻¹ (x − μ)`.
    fn eval(&self, x: &DVector<f64>, want_grad: bool) -> (f64, Option<DVector<f64>>) {
        let r = x - &self.mean;
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a nonzero diagonal");
        let lp = self.log_norm - 0.5 * y.norm_squared();
        let g = want_grad.then(|| {
            self.chol
                .l_dirty()
                .tr_solve_lower_triangular(&y)
                .expect("cholesky factor has a nonzero diagonal")
        });
        (lp, g)
    }
}

/// Serializable mixture description (weights, means, covariances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d × d` covariance per component.
    pub covariances: Vec<Vec<Vec<f64>>>,
}

/// Gaussian mixture with full covariances.
#[derive(Debug, Clone)]
pub struct GmmDensity {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Component>,
    dim: usize,
}

impl GmmDensity {
    pub fn new(weights: Vec<f64>, means: Vec<Array1<f64>>, covs: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(CdmError::InvalidDensity(
                "weights, means and covariances must be nonempty and equally long".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(CdmError::InvalidDensity("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CdmError::InvalidDensity(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let dim = means[0].len();
        let components = means
            .into_iter()
            .zip(covs)
            .map(|(m, c)| {
                if m.len() != dim {
                    return Err(CdmError::DimensionMismatch {
                        expected: dim,
                        got: m.len(),
                    });
                }
                let mean = DVector::from_iterator(dim, m.iter().cloned());
                let cov = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[[i, j]]);
                Component::new(mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            components,
            dim,
        })
    }

    pub fn from_spec(spec: &GmmSpec) -> Result<Self> {
        let means = spec.means.iter().map(|m| Array1::from(m.clone())).collect();
        let covs = spec
            .covariances
            .iter()
            .map(|rows| {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(CdmError::InvalidDensity("covariance must be square".into()));
                }
                Ok(Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.weights.clone(), means, covs)
    }

    pub fn to_spec(&self) -> GmmSpec {
        GmmSpec {
            weights: self.weights.clone(),
            means: self
                .components
                .iter()
                .map(|c| c.mean.iter().cloned().collect())
                .collect(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    (0..self.dim)
                        .map(|i| (0..self.dim).map(|j| c.cov[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![Array1::zeros(dim)], vec![Array2::eye(dim)])
            .expect("identity covariance is valid")
    }

    /// Single zero-mean Gaussian.
    pub fn gaussian(cov: Array2<f64>) -> Result<Self> {
        let d = cov.nrows();
        Self::new(vec![1.0], vec![Array1::zeros(d)], vec![cov])
    }

    /// A near-Dirac component at `mean` with covariance `COVARIANCE_FLOOR · I`.
    pub fn point_mass(mean: Array1<f64>) -> Self {
        let d = mean.len();
        Self::new(
            vec![1.0],
            vec![mean],
            vec![Array2::eye(d) * COVARIANCE_FLOOR],
        )
        .expect("floored covariance is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> Array1<f64> {
        Array1::from_iter(self.components[k].mean.iter().cloned())
    }

    pub fn covariance(&self, k: usize) -> Array2<f64> {
        let c = &self.components[k].cov;
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| c[(i, j)])
    }

    /// Log-determinant of component `k`'s covariance.
    pub fn log_det(&self, k: usize) -> f64 {
        -2.0 * self.components[k].log_norm - self.dim as f64 * LN_2PI
    }

    fn to_dvec(&self, x: ArrayView1<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim, x.iter().cloned())
    }

    pub fn logpdf(&self, x: ArrayView1<f64>) -> f64 {
        let xv = self.to_dvec(x);
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.eval(&xv, false).0)
            .collect();
        log_sum_exp(&terms)
    }

    /// Log density and score `∇ log p(x)` in closed form.
    pub fn logpdf_and_score(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let xv = self.to_dvec(x);
        let mut terms = Vec::with_capacity(self.components.len());
        let mut grads = Vec::with_capacity(self.components.len());
        for (c, lw) in self.components.iter().zip(&self.log_weights) {
            let (lp, g) = c.eval(&xv, true);
            terms.push(lw + lp);
            grads.push(g.unwrap());
        }
        let lse = log_sum_exp(&terms);
        let mut score = Array1::zeros(self.dim);
        for (term, g) in terms.iter().zip(&grads) {
            let r = (term - lse).exp();
            for j in 0..self.dim {
                score[j] -= r * g[j];
            }
        }
        (lse, score)
    }

    pub fn logpdf_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.logpdf(r)).collect()
    }

    /// Density of `signal · X + noise · ε` for `X` from this mixture:
    /// means scale by `signal`, covariances become `signal² Σ + noise² I`.
    pub fn diffused(&self, signal: f64, noise: f64) -> Self {
        let d = self.dim;
        if signal == 0.0 {
            let cov = Array2::eye(d) * (noise * noise);
            return Self::new(vec![1.0], vec![Array1::zeros(d)], vec![cov])
                .expect("isotropic covariance is valid");
        }
        let eye = DMatrix::<f64>::identity(d, d);
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = &c.mean * signal;
                let cov = &c.cov * (signal * signal) + &eye * (noise * noise);
                Component::new(mean, cov).expect("diffused covariance stays positive definite")
            })
            .collect();
        Self {
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            components,
            dim: d,
        }
    }

    /// Same mixture with components reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            log_weights: perm.iter().map(|&i| self.log_weights[i]).collect(),
            components: perm.iter().map(|&i| self.components[i].clone()).collect(),
            dim: self.dim,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.components.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let c = &self.components[k];
            let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
            let x = &c.mean + c.chol.l_dirty().lower_triangle() * z;
            row.iter_mut().zip(x.iter()).for_each(|(o, v)| *o = *v);
        }
        out
    }
}

/// Log density of the uniform box, with an explicit outside flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLogPdf {
    pub value: f64,
    pub outside: bool,
}

/// `U[−γ/2, γ/2]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBoxDensity {
    pub gamma: f64,
    pub dim: usize,
}

impl UniformBoxDensity {
    pub fn new(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CdmError::InvalidDensity(format!(
                "edge length must be positive, got {gamma}"
            )));
        }
        if dim == 0 {
            return Err(CdmError::InvalidDensity(
                "dimension must be positive".into(),
            ));
        }
        Ok(Self { gamma, dim })
    }

    pub fn logpdf(&self, x: ArrayView1<f64>) -> BoxLogPdf {
        let half = 0.5 * self.gamma;
        let outside = x.len() != self.dim || x.iter().any(|v| v.abs() > half);
        BoxLogPdf {
            value: if outside {
                f64::NEG_INFINITY
            } else {
                -(self.dim as f64) * self.gamma.ln()
            },
            outside,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let half = 0.5 * self.gamma;
        Array2::from_shape_simple_fn((n, self.dim), || rng.random_range(-half..=half))
    }

    /// Log density and score of `signal · X + noise · ε`. Coordinates are
    /// independent, each a box convolved with a Gaussian:
    /// `p(x) = [Φ((x + aγ/2)/b) − Φ((x − aγ/2)/b)] / (aγ)`.
    pub fn diffused_logpdf_and_score(
        &self,
        signal: f64,
        noise: f64,
        x: ArrayView1<f64>,
    ) -> (f64, Array1<f64>) {
        if noise == 0.0 {
            let base = self.logpdf(x.mapv(|v| v / signal).view());
            let value = base.value - self.dim as f64 * signal.ln();
            return (value, Array1::zeros(x.len()));
        }
        if signal == 0.0 {
            let var = noise * noise;
            let lp = -0.5 * (x.len() as f64 * (LN_2PI + var.ln()) + x.dot(&x) / var);
            return (lp, x.mapv(|v| -v / var));
        }
        let half = 0.5 * signal * self.gamma;
        let mut lp = 0.0;
        let mut score = Array1::zeros(x.len());
        for (j, &v) in x.iter().enumerate() {
            let hi = (v + half) / noise;
            let lo = (v - half) / noise;
            let log_mass = log_normal_interval(lo, hi);
            lp += log_mass - (signal * self.gamma).ln();
            // d/dv log mass = (φ(hi) − φ(lo)) / (noise · mass)
            let dphi = (log_phi(hi) - log_mass).exp() - (log_phi(lo) - log_mass).exp();
            score[j] = dphi / noise;
        }
        (lp, score)
    }
}

fn log_phi(u: f64) -> f64 {
    -0.5 * (LN_2PI + u * u)
}

/// `ln(Φ(hi) − Φ(lo))` for `lo < hi`, evaluated on the side of the real
/// line that avoids cancellation.
fn log_normal_interval(lo: f64, hi: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        // Upper tail: Q(lo) − Q(hi).
        let ql = 0.5 * erfc(lo * s);
        let qh = 0.5 * erfc(hi * s);
        (ql - qh).ln()
    } else if hi <= 0.0 {
        let ph = 0.5 * erfc(-hi * s);
        let pl = 0.5 * erfc(-lo * s);
        (ph - pl).ln()
    } else {
        let below = 0.5 * erfc(-lo * s);
        let above = 0.5 * erfc(hi * s);
        (1.0 - below - above).ln()
    }
}
