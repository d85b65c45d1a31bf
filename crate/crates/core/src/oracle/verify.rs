//! Numerical verification of the classifier/denoiser and classifier/likelihood
//! identities against the closed-form oracle.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Serialize;

use super::density::std_normal_logpdf;
use super::family::{oracle_denoiser, DiffusedFamily, OracleClassifier};
use super::{floored_rel_error, floored_rel_error_vec};
use crate::error::{CdmError, Result};
use crate::net::{ClassifierNet, LossBatch, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum GradientMode {
    Analytic,
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub evaluations: usize,
    /// `(point index, timestep)` of the largest discrepancy.
    pub worst: Option<(usize, usize)>,
}

#[derive(Default)]
struct Tally {
    max: f64,
    sum: f64,
    n: usize,
    worst: Option<(usize, usize)>,
}

impl Tally {
    fn push(&mut self, err: f64, at: (usize, usize)) {
        // NaN counts as a failure.
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if self.worst.is_none() || err > self.max {
            self.max = err;
            self.worst = Some(at);
        }
        self.sum += err;
        self.n += 1;
    }

    fn finish(self) -> Result<VerifyReport> {
        if self.n == 0 {
            return Err(CdmError::InvalidConfig(
                "no (point, timestep) pairs to verify".into(),
            ));
        }
        Ok(VerifyReport {
            max_rel_error: self.max,
            mean_rel_error: self.sum / self.n as f64,
            evaluations: self.n,
            worst: self.worst,
        })
    }
}

fn classifier_for<'a, F: DiffusedFamily>(
    family: &'a F,
    prior: Option<&[f64]>,
) -> Result<OracleClassifier<&'a F>> {
    match prior {
        Some(w) => OracleClassifier::with_prior(family, w),
        None => Ok(OracleClassifier::uniform(family)),
    }
}

/// Checks `n_t (∇F(x,t) + x) = E[ε_t | x_t = x]` where
/// `F = log p(K|x) − log p(t|x)` comes from the oracle posterior under the
/// given prior (uniform when `None`) and the right side from Tweedie's
/// formula. Returns the worst floored relative error.
pub fn verify_theorem1<F: DiffusedFamily>(
    family: &F,
    prior: Option<&[f64]>,
    points: ArrayView2<f64>,
    ts: &[usize],
    mode: GradientMode,
) -> Result<VerifyReport> {
    let clf = classifier_for(family, prior)?;
    let sched = family.schedule();
    let k = sched.noise_class_index();
    for &t in ts {
        sched.check_timestep(t)?;
        if t == 0 {
            return Err(CdmError::Unsupported("the identity starts at t = 1".into()));
        }
    }
    let mut tally = Tally::default();
    for (i, x) in points.rows().into_iter().enumerate() {
        let analytic =
            matches!(mode, GradientMode::Analytic).then(|| clf.log_posterior_gradients(x));
        for &t in ts {
            let grad_f: Array1<f64> = match (&analytic, mode) {
                (Some(g), _) => &g.row(k) - &g.row(t),
                (None, GradientMode::FiniteDifference { step }) => {
                    let f = |y: ArrayView1<f64>| {
                        let lp = clf.log_posterior(y);
                        lp[k] - lp[t]
                    };
                    central_difference(f, x, step)
                }
                (None, GradientMode::Analytic) => unreachable!(),
            };
            let lhs = (&grad_f + &x) * sched.noise_coef(t);
            let rhs = oracle_denoiser(family, x, t)?;
            tally.push(floored_rel_error_vec(lhs.view(), rhs.view()), (i, t));
        }
    }
    tally.finish()
}

/// Checks `log p_t(x) = log(p_t(K)/p_t(t)) + log p(t|x) − log p(K|x) + log N(x; 0, I)`
/// against the analytic diffused density.
pub fn verify_theorem2<F: DiffusedFamily>(
    family: &F,
    prior: Option<&[f64]>,
    points: ArrayView2<f64>,
    ts: &[usize],
) -> Result<VerifyReport> {
    let clf = classifier_for(family, prior)?;
    let sched = family.schedule();
    let k = sched.noise_class_index();
    for &t in ts {
        sched.check_timestep(t)?;
    }
    let lp_prior = clf.log_prior();
    let mut tally = Tally::default();
    for (i, x) in points.rows().into_iter().enumerate() {
        let post = clf.log_posterior(x);
        let reference = std_normal_logpdf(x);
        for &t in ts {
            let est = (lp_prior[k] - lp_prior[t]) + post[t] - post[k] + reference;
            let exact = family.log_density(t, x);
            // Outside a bounded support both sides are −∞.
            let err = if est == exact {
                0.0
            } else {
                floored_rel_error(est, exact)
            };
            tally.push(err, (i, t));
        }
    }
    tally.finish()
}

/// Analytic score of each diffused density against central differences of
/// its log density.
pub fn tweedie_check<F: DiffusedFamily>(
    family: &F,
    points: ArrayView2<f64>,
    ts: &[usize],
    step: f64,
) -> Result<VerifyReport> {
    let mut tally = Tally::default();
    for (i, x) in points.rows().into_iter().enumerate() {
        for &t in ts {
            family.schedule().check_timestep(t)?;
            let (_, score) = family.log_density_and_score(t, x);
            let fd = central_difference(|y| family.log_density(t, y), x, step);
            tally.push(floored_rel_error_vec(fd.view(), score.view()), (i, t));
        }
    }
    tally.finish()
}

/// Parameter gradient of the combined loss against central differences of
/// the loss, as `‖analytic − fd‖ / ‖fd‖` over the whole parameter vector.
pub fn gradcheck(
    net: &ClassifierNet,
    batch: &LossBatch,
    weights: LossWeights,
    step: f64,
) -> Result<f64> {
    let analytic = net.loss_and_param_grads(batch, weights)?.grads.to_flat();
    let mut flat = net.params().to_flat();
    let mut probe = net.clone();
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (p, a) in analytic.iter().enumerate() {
        let orig = flat[p];
        flat[p] = orig + step;
        probe.params_mut().copy_from_flat(&flat)?;
        let up = probe.loss_and_param_grads(batch, weights)?.loss;
        flat[p] = orig - step;
        probe.params_mut().copy_from_flat(&flat)?;
        let down = probe.loss_and_param_grads(batch, weights)?.loss;
        flat[p] = orig;
        let fd = (up - down) / (2.0 * step);
        diff += (a - fd).powi(2);
        norm += fd * fd;
    }
    if norm == 0.0 {
        return Ok(diff.sqrt());
    }
    Ok((diff / norm).sqrt())
}

fn central_difference<G: Fn(ArrayView1<f64>) -> f64>(
    f: G,
    x: ArrayView1<f64>,
    step: f64,
) -> Array1<f64> {
    let mut y = x.to_owned();
    let mut out = Array1::zeros(x.len());
    for j in 0..x.len() {
        let orig = y[j];
        y[j] = orig + step;
        let up = f(y.view());
        y[j] = orig - step;
        let down = f(y.view());
        y[j] = orig;
        out[j] = (up - down) / (2.0 * step);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GmmDensity, GmmFamily};
    use crate::schedule::{ScheduleKind, ScheduleSpec};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, d: usize, scale: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    }

    fn gmm2() -> GmmDensity {
        GmmDensity::new(
            vec![0.35, 0.65],
            vec![array![-1.0, 0.5], array![1.2, -0.3]],
            vec![
                array![[0.3, 0.1], [0.1, 0.2]],
                array![[0.1, 0.0], [0.0, 0.25]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_denoiser_identity_is_tight() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 100)
            .build()
            .unwrap();
        let fam = GmmFamily::new(GmmDensity::standard_normal(2), s);
        let pts = random_points(50, 2, 2.0, 1);
        let r = verify_theorem1(
            &fam,
            None,
            pts.view(),
            &[1, 25, 50, 100],
            GradientMode::Analytic,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
    }

    #[test]
    fn denoiser_identity_two_components_both_gradient_modes() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 100)
            .build()
            .unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let pts = random_points(200, 2, 1.5, 2);
        let ts = [1, 5, 20, 50, 80, 100];
        let a = verify_theorem1(&fam, None, pts.view(), &ts, GradientMode::Analytic).unwrap();
        assert!(a.max_rel_error <= 1e-8, "{a:?}");
        let f = verify_theorem1(
            &fam,
            None,
            pts.view(),
            &ts,
            GradientMode::FiniteDifference { step: 1e-5 },
        )
        .unwrap();
        assert!(f.max_rel_error <= 1e-4, "{f:?}");
    }

    #[test]
    fn denoiser_identity_ot_schedule() {
        let s = ScheduleSpec::new(ScheduleKind::Ot, 50).build().unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let pts = random_points(100, 2, 1.5, 3);
        let r = verify_theorem1(
            &fam,
            None,
            pts.view(),
            &[1, 10, 25, 49, 50],
            GradientMode::Analytic,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn denoiser_identity_is_prior_independent() {
        let s = ScheduleSpec::new(ScheduleKind::TreUniform, 30)
            .build()
            .unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let geometric: Vec<f64> = (0..32).map(|t| 0.9f64.powi(t)).collect();
        let x = array![0.3, -0.7];
        let uni = OracleClassifier::uniform(&fam).log_posterior_gradients(x.view());
        let geo = OracleClassifier::with_prior(&fam, &geometric)
            .unwrap()
            .log_posterior_gradients(x.view());
        let post_u = OracleClassifier::uniform(&fam).posterior(x.view());
        let post_g = OracleClassifier::with_prior(&fam, &geometric)
            .unwrap()
            .posterior(x.view());
        assert!((&post_u - &post_g).mapv(f64::abs).sum() > 1e-3);
        for t in 1..32 {
            let du = &uni.row(31) - &uni.row(t);
            let dg = &geo.row(31) - &geo.row(t);
            for (a, b) in du.iter().zip(dg.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let pts = random_points(50, 2, 1.5, 4);
        let r = verify_theorem1(
            &fam,
            Some(&geometric),
            pts.view(),
            &[1, 15, 30],
            GradientMode::Analytic,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-8);
    }

    #[test]
    fn likelihood_identity_uniform_and_geometric_prior() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 60)
            .build()
            .unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let pts = random_points(100, 2, 1.5, 5);
        let ts: Vec<usize> = vec![0, 1, 10, 30, 60, 61];
        let r = verify_theorem2(&fam, None, pts.view(), &ts).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        let geometric: Vec<f64> = (0..62).map(|t| 0.95f64.powi(t)).collect();
        let r = verify_theorem2(&fam, Some(&geometric), pts.view(), &ts).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        let r = verify_theorem2(&fam, None, pts.view(), &[61]).unwrap();
        assert!(r.max_rel_error <= 1e-15);
    }

    #[test]
    fn tweedie_scores() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 100)
            .build()
            .unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let pts = random_points(100, 2, 1.5, 6);
        let r = tweedie_check(&fam, pts.view(), &[0, 1, 50, 101], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let s = ScheduleSpec::new(ScheduleKind::DdpmLinear, 10)
            .build()
            .unwrap();
        let fam = GmmFamily::new(gmm2(), s);
        let pts = Array2::<f64>::zeros((0, 2));
        assert!(verify_theorem2(&fam, None, pts.view(), &[1]).is_err());
        let pts = Array2::<f64>::zeros((1, 2));
        assert!(verify_theorem1(&fam, None, pts.view(), &[0], GradientMode::Analytic).is_err());
    }
}
