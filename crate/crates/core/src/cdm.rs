//! Denoising, sampling steps and likelihoods expressed through a noise-level
//! classifier.
//!
//! With `F(x, t) = f(x)[K] − f(x)[t]` the MMSE noise prediction is
//! `n_t (∇_x F(x, t) + x)` where `n_t` is the schedule's noise coefficient,
//! and the log density of `x_t` is the log-posterior contrast against the
//! pure-noise class plus the standard Gaussian log density.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::classifier::NoiseClassifier;
use crate::error::{CdmError, Result};
use crate::net::log_softmax;
use crate::oracle::std_normal_logpdf;
use crate::schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone)]
pub struct DenoisingOutput {
    pub eps_hat: Array1<f64>,
    /// Implied clean signal; `None` at the pure-noise class.
    pub x0_hat: Option<Array1<f64>>,
    /// `F(x, t)`.
    pub f_value: f64,
}

/// Reverse-process noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// `σ_t² = β_t`.
    #[default]
    Beta,
    /// `σ_t² = β̃_t = (1−ᾱ_{t−1}) / (1−ᾱ_t) β_t`.
    PosteriorVariance,
}

impl SigmaChoice {
    pub fn sigma(self, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
        let var = match self {
            SigmaChoice::Beta => schedule.beta(t)?,
            SigmaChoice::PosteriorVariance => schedule.beta_tilde(t)?,
        };
        Ok(var.sqrt())
    }
}

fn check_compat<C: NoiseClassifier>(clf: &C, schedule: &NoiseSchedule, dim: usize) -> Result<()> {
    if clf.num_classes() != schedule.num_classes() {
        return Err(CdmError::DimensionMismatch {
            expected: schedule.num_classes(),
            got: clf.num_classes(),
        });
    }
    if clf.input_dim() != dim {
        return Err(CdmError::DimensionMismatch {
            expected: clf.input_dim(),
            got: dim,
        });
    }
    Ok(())
}

fn x0_from_eps(
    schedule: &NoiseSchedule,
    x: ArrayView1<f64>,
    eps: ArrayView1<f64>,
    t: usize,
) -> Option<Array1<f64>> {
    let a = schedule.signal_coef(t);
    if a == 0.0 {
        return None;
    }
    let b = schedule.noise_coef(t);
    Some((&x - &(&eps * b)) / a)
}

/// Noise prediction for every row at a common timestep.
pub fn predict_eps<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    let ts = vec![t; x.nrows()];
    predict_eps_rows(clf, schedule, x, &ts)
}

/// Noise prediction with a timestep per row.
pub fn predict_eps_rows<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    ts: &[usize],
) -> Result<Array2<f64>> {
    check_compat(clf, schedule, x.ncols())?;
    for &t in ts {
        schedule.check_timestep(t)?;
    }
    let (_, grad) = clf.contrast_gradient(x, ts)?;
    let mut eps = grad + &x;
    for (mut row, &t) in eps.rows_mut().into_iter().zip(ts) {
        row *= schedule.noise_coef(t);
    }
    Ok(eps)
}

pub fn denoise_eps<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView1<f64>,
    t: usize,
) -> Result<DenoisingOutput> {
    check_compat(clf, schedule, x.len())?;
    schedule.check_timestep(t)?;
    let (f, grad) = clf.contrast_gradient(x.insert_axis(Axis(0)), &[t])?;
    let eps_hat = (&grad.row(0) + &x) * schedule.noise_coef(t);
    let x0_hat = x0_from_eps(schedule, x, eps_hat.view(), t);
    Ok(DenoisingOutput {
        eps_hat,
        x0_hat,
        f_value: f[0],
    })
}

fn check_reverse_t(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    if t == 0 || t > schedule.steps() {
        return Err(CdmError::TimestepOutOfRange {
            t,
            max: schedule.steps(),
        });
    }
    Ok(())
}

/// One ancestral step `x_t → x_{t−1}` written directly in the classifier
/// gradient: `√α_t x − (1−α_t)/√α_t ∇F + σ_t z`.
pub fn reverse_step<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
    z: Option<ArrayView2<f64>>,
    sigma: f64,
) -> Result<Array2<f64>> {
    check_reverse_t(schedule, t)?;
    check_compat(clf, schedule, x.ncols())?;
    let alpha = schedule.alpha(t)?;
    let (_, grad) = clf.contrast_gradient(x, &vec![t; x.nrows()])?;
    let mut out = &x * alpha.sqrt() - &(grad * ((1.0 - alpha) / alpha.sqrt()));
    if let Some(z) = z {
        out.scaled_add(sigma, &z);
    }
    Ok(out)
}

/// The same step through the noise prediction:
/// `(x − (1−α_t)/√(1−ᾱ_t) ε̂) / √α_t + σ_t z`.
pub fn reverse_step_via_eps<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
    z: Option<ArrayView2<f64>>,
    sigma: f64,
) -> Result<Array2<f64>> {
    check_reverse_t(schedule, t)?;
    let alpha = schedule.alpha(t)?;
    let eps = predict_eps(clf, schedule, x, t)?;
    let coef = (1.0 - alpha) / schedule.noise_coef(t);
    let mut out = (&x - &(eps * coef)) / alpha.sqrt();
    if let Some(z) = z {
        out.scaled_add(sigma, &z);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLikelihood {
    pub nats: f64,
    pub bits_per_dim: f64,
}

impl LogLikelihood {
    fn new(nats: f64, dim: usize) -> Self {
        Self {
            nats,
            bits_per_dim: -nats / (dim as f64 * std::f64::consts::LN_2),
        }
    }
}

/// `log p_{x_t}(x)` for each row from a single classifier forward pass,
/// assuming a uniform timestep prior.
pub fn log_likelihood<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<Vec<LogLikelihood>> {
    check_compat(clf, schedule, x.ncols())?;
    schedule.check_timestep(t)?;
    let k = schedule.noise_class_index();
    let logits = clf.logits(x)?;
    Ok(logits
        .rows()
        .into_iter()
        .zip(x.rows())
        .map(|(row, xi)| {
            let ls = log_softmax(row);
            LogLikelihood::new(ls[t] - ls[k] + std_normal_logpdf(xi), x.ncols())
        })
        .collect())
}

fn require_ot(schedule: &NoiseSchedule) -> Result<()> {
    if schedule.kind() != ScheduleKind::Ot {
        return Err(CdmError::Unsupported(format!(
            "the velocity field needs an ot schedule, got {}",
            schedule.kind()
        )));
    }
    Ok(())
}

/// Velocity of the linear interpolation path at discrete time `t < T`:
/// `(t/T) / (T − t) · ∇F − x / T`.
pub fn vector_field_ot<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    require_ot(schedule)?;
    check_compat(clf, schedule, x.ncols())?;
    let big_t = schedule.steps();
    if t >= big_t {
        return Err(CdmError::TimestepOutOfRange { t, max: big_t - 1 });
    }
    let tf = big_t as f64;
    let coef = (t as f64 / tf) / (tf - t as f64);
    if coef == 0.0 {
        return Ok(&x * (-1.0 / tf));
    }
    let (_, grad) = clf.contrast_gradient(x, &vec![t; x.nrows()])?;
    Ok(grad * coef - &(&x / tf))
}

/// The velocity through the noise prediction, `(ε̂ − x) / (T − t)`.
pub fn vector_field_ot_via_eps<C: NoiseClassifier>(
    clf: &C,
    schedule: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    require_ot(schedule)?;
    let big_t = schedule.steps();
    if t >= big_t {
        return Err(CdmError::TimestepOutOfRange { t, max: big_t - 1 });
    }
    let eps = predict_eps(clf, schedule, x, t)?;
    Ok((eps - &x) / (big_t - t) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::CountingClassifier;
    use crate::net::{Activation, ClassifierNet, NetSpec};
    use crate::oracle::{GmmDensity, GmmFamily, OracleClassifier};
    use crate::schedule::ScheduleSpec;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_net(d: usize, k: usize, seed: u64, cumsum: bool) -> ClassifierNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetSpec {
            input_dim: d,
            hidden: vec![16, 16],
            num_classes: k,
            activation: Activation::Silu,
            cumsum_head: cumsum,
            input_scale: 1.0,
        };
        let mut net = ClassifierNet::init(spec, &mut rng).unwrap();
        // Nonzero head so gradients are nontrivial.
        for v in net.params_mut().values_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * z;
        }
        net
    }

    fn normal_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn clean_class_predicts_zero_noise() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 20)
            .build()
            .unwrap();
        let net = random_net(3, 22, 1, false);
        let out = denoise_eps(&net, &s, array![0.1, 0.2, -0.3].view(), 0).unwrap();
        assert!(out.eps_hat.iter().all(|&v| v == 0.0));
        assert_eq!(out.x0_hat.unwrap(), array![0.1, 0.2, -0.3]);
    }

    #[test]
    fn x0_hat_inverts_forward_map() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 20)
            .build()
            .unwrap();
        let net = random_net(3, 22, 2, true);
        let x = array![0.5, -0.2, 1.0];
        let out = denoise_eps(&net, &s, x.view(), 7).unwrap();
        let ab = s.alpha_bar(7).unwrap();
        let rebuilt = &out.x0_hat.unwrap() * ab.sqrt() + &out.eps_hat * (1.0 - ab).sqrt();
        for (a, b) in rebuilt.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let noise = denoise_eps(&net, &s, x.view(), 21).unwrap();
        assert!(noise.x0_hat.is_none());
        assert_eq!(noise.f_value, 0.0);
    }

    #[test]
    fn oracle_point_mass_and_standard_normal() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 50)
            .build()
            .unwrap();
        let x = array![0.3, -0.8];
        let pm = GmmFamily::new(GmmDensity::point_mass(array![0.0, 0.0]), s.clone());
        let oc = OracleClassifier::uniform(&pm);
        for t in [1, 10, 50] {
            let n = s.noise_coef(t);
            let out = denoise_eps(&oc, &s, x.view(), t).unwrap();
            for (a, b) in out.eps_hat.iter().zip(x.iter()) {
                assert!((a - b / n).abs() < 1e-5 * (b / n).abs().max(1.0));
            }
        }
        let sn = GmmFamily::new(GmmDensity::standard_normal(2), s.clone());
        let oc = OracleClassifier::uniform(&sn);
        for t in [1, 25, 50] {
            let out = denoise_eps(&oc, &s, x.view(), t).unwrap();
            let (_, g) = oc
                .contrast_gradient(x.view().insert_axis(Axis(0)), &[t])
                .unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-12));
            for (a, b) in out.eps_hat.iter().zip(x.iter()) {
                assert!((a - b * s.noise_coef(t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reverse_step_forms_agree() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 30)
            .build()
            .unwrap();
        let net = random_net(4, 32, 3, true);
        let x = normal_rows(8, 4, 4);
        let z = normal_rows(8, 4, 5);
        for t in [1, 2, 15, 30] {
            let sigma = SigmaChoice::Beta.sigma(&s, t).unwrap();
            let a = reverse_step(&net, &s, x.view(), t, Some(z.view()), sigma).unwrap();
            let b = reverse_step_via_eps(&net, &s, x.view(), t, Some(z.view()), sigma).unwrap();
            let err = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err <= 1e-10, "t={t}: {err}");
        }
        assert!(reverse_step(&net, &s, x.view(), 0, None, 0.0).is_err());
        assert!(reverse_step(&net, &s, x.view(), 31, None, 0.0).is_err());
    }

    #[test]
    fn zero_rate_step_is_identity() {
        let s = ScheduleSpec::ddpm_linear(10, 0.0, 0.0).build().unwrap();
        let net = random_net(2, 12, 6, false);
        let x = normal_rows(3, 2, 7);
        let out = reverse_step(&net, &s, x.view(), 4, None, 0.0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn oracle_point_mass_reverse_step() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 50)
            .build()
            .unwrap();
        let pm = GmmFamily::new(GmmDensity::point_mass(array![0.0, 0.0]), s.clone());
        let oc = OracleClassifier::uniform(&pm);
        let x = array![[0.6, -0.4]];
        for t in [2, 20, 50] {
            let a = s.alpha(t).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let out = reverse_step(&oc, &s, x.view(), t, None, 0.0).unwrap();
            for j in 0..2 {
                let xv = x[[0, j]];
                let grad = -xv + xv / (1.0 - ab);
                let expected = a.sqrt() * xv - (1.0 - a) / a.sqrt() * grad;
                assert!((out[[0, j]] - expected).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn likelihood_uses_one_forward_pass() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 20)
            .build()
            .unwrap();
        let net = CountingClassifier::new(random_net(3, 22, 8, false));
        let x = normal_rows(5, 3, 9);
        let ll = log_likelihood(&net, &s, x.view(), 0).unwrap();
        assert_eq!(ll.len(), 5);
        assert_eq!(net.forward_calls(), 1);
        assert_eq!(net.forward_evals(), 5);
        assert_eq!(net.gradient_evals(), 0);

        // At the noise class the ratio cancels.
        let ll = log_likelihood(&net, &s, x.view(), 21).unwrap();
        for (l, row) in ll.iter().zip(x.rows()) {
            assert_eq!(l.nats, std_normal_logpdf(row));
            let bpd = -l.nats / (3.0 * std::f64::consts::LN_2);
            assert!((l.bits_per_dim - bpd).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_likelihood_matches_gmm_density() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 40)
            .build()
            .unwrap();
        let gmm = GmmDensity::new(
            vec![0.5, 0.5],
            vec![array![-1.0, 0.0], array![1.0, 0.5]],
            vec![Array2::eye(2) * 0.2, Array2::eye(2) * 0.3],
        )
        .unwrap();
        let fam = GmmFamily::new(gmm.clone(), s.clone());
        let oc = OracleClassifier::uniform(&fam);
        let x = normal_rows(20, 2, 10);
        let ll = log_likelihood(&oc, &s, x.view(), 0).unwrap();
        for (l, row) in ll.iter().zip(x.rows()) {
            let exact = gmm.logpdf(row);
            assert!(
                (l.nats - exact).abs() <= 1e-8 * exact.abs(),
                "{} vs {exact}",
                l.nats
            );
        }
    }

    #[test]
    fn ot_vector_field_forms() {
        let s = ScheduleSpec::new(ScheduleKind::Ot, 40).build().unwrap();
        let net = random_net(3, 41, 11, false);
        let x = normal_rows(6, 3, 12);
        let v0 = vector_field_ot(&net, &s, x.view(), 0).unwrap();
        assert_eq!(v0, &x * (-1.0 / 40.0));
        for t in [1, 10, 39] {
            let a = vector_field_ot(&net, &s, x.view(), t).unwrap();
            let b = vector_field_ot_via_eps(&net, &s, x.view(), t).unwrap();
            let err = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(err <= 1e-10);
        }
        assert!(vector_field_ot(&net, &s, x.view(), 40).is_err());
        let vp = ScheduleSpec::new(ScheduleKind::DdpmLinear, 40)
            .build()
            .unwrap();
        let net42 = random_net(3, 42, 11, false);
        assert!(vector_field_ot(&net42, &vp, x.view(), 3).is_err());
    }

    #[test]
    fn ot_oracle_velocity_for_gaussian_endpoints() {
        let big_t = 50usize;
        let s = ScheduleSpec::new(ScheduleKind::Ot, big_t).build().unwrap();
        let fam = GmmFamily::new(GmmDensity::standard_normal(2), s.clone());
        let oc = OracleClassifier::uniform(&fam);
        let x = normal_rows(4, 2, 13);
        for t in [1, 10, 25, 40, 49] {
            let v = vector_field_ot(&oc, &s, x.view(), t).unwrap();
            let u = t as f64 / big_t as f64;
            let gain = (2.0 * u - 1.0) / ((1.0 - u).powi(2) + u * u) / big_t as f64;
            let expected = &x * gain;
            let err = (&v - &expected)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &e| m.max(e));
            assert!(err < 1e-12, "t={t}: {err}");
        }
    }
}
