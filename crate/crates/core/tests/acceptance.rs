//! Acceptance suite. Runs every criterion in sequence (so wall-clock budgets
//! are measured without interference), prints one PASS/FAIL line each and
//! ends with a summary line.
//!
//! `CDM_ACCEPTANCE=1,4,7` restricts the run to the listed criteria.
//! `CDM_ACCEPTANCE_STRICT=1` makes any failing criterion fail the target.

use std::time::Instant;

use cdm_core::classifier::CountingClassifier;
use cdm_core::data::{DataSource, DataSpec};
use cdm_core::eval::{
    classification_metrics, denoising_mse_at, energy_permutation_test, mse_ratio, nll_bits_per_dim,
    nll_on_source, oracle_mse_at, per_t_accuracy, variance,
};
use cdm_core::net::{LossBatch, LossWeights};
use cdm_core::oracle::{
    tweedie_check, verify_theorem1, verify_theorem2, DiffusedFamily, GmmDensity, GmmFamily,
    GmmSpec, GradientMode,
};
use cdm_core::train::LrSchedule;
use cdm_core::{
    sample, train, Activation, Checkpoint, ClassifierNet, LossMode, NetSpec, NoiseSchedule,
    ParamSet, SamplerConfig, SamplerKind, ScheduleKind, ScheduleSpec, TrainConfig,
};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Oracle-identity grid (criteria 1-3)

fn random_gmm(components: usize, d: usize, rng: &mut ChaCha8Rng) -> GmmDensity {
    let raw: Vec<f64> = (0..components)
        .map(|_| rng.random_range(0.2..1.0))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..components)
        .map(|_| Array1::from_shape_simple_fn(d, || rng.random_range(-2.5..2.5)))
        .collect();
    let covs = (0..components)
        .map(|_| {
            let a = Array2::from_shape_simple_fn((d, d), || rng.random_range(-0.6..0.6));
            a.dot(&a.t()) + Array2::<f64>::eye(d) * 0.05
        })
        .collect();
    GmmDensity::new(weights, means, covs).unwrap()
}

/// A third clean draws, a third lightly perturbed, a third wide Gaussian.
fn probe_points(gmm: &GmmDensity, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = gmm.sample(rng, n);
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            match i % 3 {
                0 => {}
                1 => *v += 0.5 * z,
                _ => *v = 2.0 * z,
            }
        }
    }
    x
}

fn ten_timesteps(big_t: usize) -> Vec<usize> {
    (0..10).map(|k| 1 + k * (big_t - 1) / 9).collect()
}

struct Grid {
    cases: Vec<(String, GmmFamily, Array2<f64>)>,
}

fn oracle_grid() -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::new();
    for components in [1, 2, 5] {
        let gmm = random_gmm(components, 2, &mut rng);
        let points = probe_points(&gmm, 1000, &mut rng);
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::TreUniform] {
            let schedule = ScheduleSpec::new(kind, 100).build().unwrap();
            let label = format!("{components}-component/{kind}");
            cases.push((label, GmmFamily::new(gmm.clone(), schedule), points.clone()));
        }
    }
    Grid { cases }
}

fn criterion_1(grid: &Grid) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (_, family, points) in &grid.cases {
        let ts = ten_timesteps(100);
        let r = verify_theorem1(family, None, points.view(), &ts, GradientMode::Analytic)
            .map_err(err)?;
        worst = worst.max(r.max_rel_error);
        checks += r.evaluations;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-8 && secs < 60.0,
        format!(
            "max rel err {worst:.2e} (tol 1e-8, analytic), {checks} checks, {secs:.1}s (< 60s)"
        ),
    ))
}

fn criterion_2(grid: &Grid) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (_, family, points) in &grid.cases {
        let mut ts = vec![0];
        ts.extend(ten_timesteps(100));
        let k = family.schedule().num_classes();
        let geometric: Vec<f64> = (0..k).map(|i| 0.95f64.powi(i as i32)).collect();
        let total: f64 = geometric.iter().sum();
        let prior: Vec<f64> = geometric.iter().map(|w| w / total).collect();
        for p in [None, Some(&prior[..])] {
            let r = verify_theorem2(family, p, points.view(), &ts).map_err(err)?;
            worst = worst.max(r.max_rel_error);
            checks += r.evaluations;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-10 && secs < 60.0,
        format!("max rel err {worst:.2e} (tol 1e-10, uniform and geometric class priors), {checks} checks, {secs:.1}s"),
    ))
}

fn criterion_3(grid: &Grid) -> Outcome {
    let (_, family, points) = grid.cases.iter().find(|c| c.0.starts_with("5-")).unwrap();
    let mut ts = vec![0];
    ts.extend(ten_timesteps(100));
    let r = tweedie_check(family, points.view(), &ts, 1e-5).map_err(err)?;
    Ok((
        r.max_rel_error <= 1e-6,
        format!(
            "score vs central differences at 1000 points: max rel err {:.2e} (tol 1e-6)",
            r.max_rel_error
        ),
    ))
}

// ---------------------------------------------------------------------------
// Parameter gradients of the combined loss (criterion 4)

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let schedule = ScheduleSpec::new(ScheduleKind::DdpmLinear, 20)
        .build()
        .unwrap();
    let k = schedule.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut nets = 0;
    for d in [2usize, 8] {
        for depth in 1..=3usize {
            for cumsum in [false, true] {
                let spec = NetSpec {
                    input_dim: d,
                    hidden: vec![7; depth],
                    num_classes: k,
                    activation: Activation::ALL[(depth + cumsum as usize) % 3],
                    cumsum_head: cumsum,
                    input_scale: 1.0,
                };
                let net = ClassifierNet::init(spec, &mut rng).map_err(err)?;
                let n = 6;
                let x0 =
                    Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
                let eps =
                    Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
                let ts: Vec<usize> = (0..n)
                    .map(|i| if i == 0 { 0 } else { rng.random_range(1..k) })
                    .collect();
                let xt = schedule
                    .forward_diffuse_batch(x0.view(), &ts, eps.view())
                    .map_err(err)?;
                let noise_coef = ts.iter().map(|&t| schedule.noise_coef(t)).collect();
                let batch = LossBatch {
                    xt,
                    ts,
                    eps,
                    noise_coef,
                };
                let weights = LossWeights { ce: 0.5, mse: 1.0 };
                let analytic = net
                    .loss_and_param_grads(&batch, weights)
                    .map_err(err)?
                    .grads
                    .to_flat();

                // Central differences of the scalar loss, one parameter at a time.
                let h = 1e-6;
                let mut flat = net.params().to_flat();
                let mut probe = net.clone();
                let mut loss_at = |flat: &[f64]| -> f64 {
                    probe.params_mut().copy_from_flat(flat).unwrap();
                    probe.loss_and_param_grads(&batch, weights).unwrap().loss
                };
                let mut diff2 = 0.0;
                let mut norm2 = 0.0;
                for p in 0..flat.len() {
                    let orig = flat[p];
                    flat[p] = orig + h;
                    let up = loss_at(&flat);
                    flat[p] = orig - h;
                    let down = loss_at(&flat);
                    flat[p] = orig;
                    let fd = (up - down) / (2.0 * h);
                    diff2 += (analytic[p] - fd).powi(2);
                    norm2 += fd * fd;
                }
                worst = worst.max((diff2 / norm2).sqrt());
                nets += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-4 && secs < 60.0,
        format!("{nets} nets (1-3 hidden layers, d in {{2, 8}}): max rel err {worst:.2e} (tol 1e-4), {secs:.1}s"),
    ))
}

// ---------------------------------------------------------------------------
// Likelihood on densities with closed-form log-likelihood (criteria 5, 6)

/// Linear schedule on `T` steps with the rate range stretched so that the
/// total noise matches the usual 1000-step schedule.
fn short_linear(steps: usize) -> ScheduleSpec {
    let s = 1000.0 / steps as f64;
    ScheduleSpec::ddpm_linear(steps, 1e-4 * s, 0.02 * s)
}

fn toy_config(data: DataSpec, steps: usize, lr: f64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(short_linear(100), data);
    c.seed = seed;
    c.steps = steps;
    c.batch_size = 256;
    c.w_ce = 0.01;
    c.ema_decay = 0.999;
    c.log_every = steps;
    c.optimizer.lr = lr;
    c.optimizer.lr_schedule = LrSchedule::Cosine;
    c.net.hidden = vec![128; 3];
    c
}

/// Mean estimated log-likelihood per dimension on fresh draws, from the raw
/// (non-averaged) parameters.
fn estimated_ll(ck: &Checkpoint, data: &DataSource, seed: u64) -> Result<f64, String> {
    let schedule = ck.build_schedule().map_err(err)?;
    let clf = ck.classifier(ParamSet::Raw).map_err(err)?;
    Ok(-nll_on_source(&clf, &schedule, data, 2000, 0, seed)
        .map_err(err)?
        .nats_per_dim)
}

const BOX_STEPS: usize = 16_000;
const BOX_LR: f64 = 1e-2;

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, gamma) in [0.25f64, 0.5, 1.0, 2.0, 3.0].into_iter().enumerate() {
        let spec = DataSpec::UniformBox { gamma, dim: 8 };
        let data = DataSource::from_spec(&spec, None).map_err(err)?;
        let (ck, _) =
            train(&toy_config(spec, BOX_STEPS, BOX_LR, 50 + i as u64), &data).map_err(err)?;
        let est = estimated_ll(&ck, &data, 9_000 + i as u64)?;
        let truth = -gamma.ln();
        ok &= (est - truth).abs() <= 0.1;
        parts.push(format!("γ={gamma}: {est:+.3} vs {truth:+.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ok && secs <= 900.0,
        format!(
            "ll/dim (tol ±0.1) {}; {secs:.0}s (≤ 900s)",
            parts.join(", ")
        ),
    ))
}

/// Fixed SPD matrix with eigenvalues spread over two decades.
fn base_covariance(d: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
    let q = a.qr().q();
    let eig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |i, _| {
        2.0 * 0.01f64.powf(i as f64 / (d - 1) as f64)
    }));
    &q * eig * q.transpose()
}

fn criterion_6() -> Outcome {
    let d = 8;
    let base = base_covariance(d);
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, g) in [0.0f64, 1e-5, 1e-3, 1e-1].into_iter().enumerate() {
        let sigma = &base * (1.0 - g).sqrt() + DMatrix::<f64>::identity(d, d) * g.sqrt();
        let chol = sigma.clone().cholesky().ok_or("covariance is not SPD")?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let truth = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0) - log_det / (2.0 * d as f64);
        let covariance = (0..d)
            .map(|r| (0..d).map(|c| sigma[(r, c)]).collect())
            .collect();
        let spec = DataSpec::Gaussian { covariance };
        let data = DataSource::from_spec(&spec, None).map_err(err)?;
        let (ck, _) = train(&toy_config(spec, 3000, 1e-3, 60 + i as u64), &data).map_err(err)?;
        let est = estimated_ll(&ck, &data, 9_100 + i as u64)?;
        ok &= (est - truth).abs() <= 0.1;
        parts.push(format!("γ={g:e}: {est:+.3} vs {truth:+.3}"));
    }
    Ok((ok, format!("ll/dim (tol ±0.1) {}", parts.join(", "))))
}

// ---------------------------------------------------------------------------
// Two-dimensional mixture experiments (criteria 7-10)

fn mixture_spec() -> GmmSpec {
    GmmSpec {
        weights: vec![0.3, 0.3, 0.4],
        means: vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.5]],
        covariances: vec![
            vec![vec![0.02, 0.0], vec![0.0, 0.02]],
            vec![vec![0.03, 0.01], vec![0.01, 0.02]],
            vec![vec![0.015, 0.0], vec![0.0, 0.03]],
        ],
    }
}

fn mixture_config(schedule: ScheduleSpec, mode: LossMode) -> TrainConfig {
    let mut c = TrainConfig::new(schedule, DataSpec::Gmm(mixture_spec()));
    c.seed = 7;
    c.steps = 3000;
    c.batch_size = 256;
    c.w_ce = 0.01;
    c.loss_mode = mode;
    c.ema_decay = 0.999;
    c.log_every = 3000;
    c.optimizer.lr = 1e-3;
    c.optimizer.lr_schedule = LrSchedule::Cosine;
    c.net.hidden = vec![128; 3];
    c
}

struct Mixture {
    data: DataSource,
    schedule: NoiseSchedule,
    both: Checkpoint,
    ce_only: Checkpoint,
    mse_only: Checkpoint,
    train_secs: f64,
}

fn train_mixture() -> Result<Mixture, String> {
    let start = Instant::now();
    let spec = ScheduleSpec::new(ScheduleKind::DdpmLinear, 1000);
    let data = DataSource::from_spec(&DataSpec::Gmm(mixture_spec()), None).map_err(err)?;
    let run = |mode| {
        train(&mixture_config(spec, mode), &data)
            .map(|r| r.0)
            .map_err(err)
    };
    let both = run(LossMode::Both)?;
    let ce_only = run(LossMode::CeOnly)?;
    let mse_only = run(LossMode::MseOnly)?;
    Ok(Mixture {
        schedule: spec.build().map_err(err)?,
        data,
        both,
        ce_only,
        mse_only,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

/// Every interior timestep; 250 paired draws each.
fn curve_ts(big_t: usize) -> Vec<usize> {
    (1..=big_t).collect()
}

const EVAL_SEED: u64 = 0xE7A1;

fn criterion_7(m: &Mixture) -> Outcome {
    let start = Instant::now();
    let clf = |ck: &Checkpoint| ck.classifier(Default::default()).map_err(err);
    let (both, ce_only, mse_only) = (clf(&m.both)?, clf(&m.ce_only)?, clf(&m.mse_only)?);
    let nll = |c: &ClassifierNet| {
        nll_on_source(c, &m.schedule, &m.data, 2000, 0, EVAL_SEED)
            .map(|s| s.nats_per_dim)
            .map_err(err)
    };
    let (nll_both, nll_ce) = (nll(&both)?, nll(&ce_only)?);
    let a = nll_ce - nll_both >= 0.2;

    let ts = curve_ts(m.schedule.steps());
    let mse_both =
        denoising_mse_at(&both, &m.schedule, &m.data, &ts, 250, EVAL_SEED).map_err(err)?;
    let mse_ce =
        denoising_mse_at(&ce_only, &m.schedule, &m.data, &ts, 250, EVAL_SEED).map_err(err)?;
    let (ratio, ratio_of_means) = mse_ratio(&mse_ce, &mse_both);
    let b = ratio >= 2.0;

    let cls = |c: &ClassifierNet| {
        classification_metrics(c, &m.schedule, &m.data, 5000, EVAL_SEED).map_err(err)
    };
    let (cls_both, cls_mse) = (cls(&both)?, cls(&mse_only)?);
    let ln_k = cls_both.uniform_ce;
    let c = cls_mse.ce > ln_k && cls_both.ce < ln_k;

    let secs = m.train_secs + start.elapsed().as_secs_f64();
    Ok((
        a && b && c && secs <= 600.0,
        format!(
            "(a) nll/dim combined {nll_both:.3} vs ce_only {nll_ce:.3}, gap {:.3} (≥ 0.2) {}; \
             (b) ce_only/combined mse, mean over t {ratio:.2} (≥ 2; ratio of means {ratio_of_means:.2}) {}; \
             (c) ce mse_only {:.3} > ln K {ln_k:.3} > combined {:.3} {}; {secs:.0}s (≤ 600s)",
            nll_ce - nll_both,
            tick(a),
            tick(b),
            cls_mse.ce,
            cls_both.ce,
            tick(c),
        ),
    ))
}

fn tick(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISS"
    }
}

fn criterion_8(m: &Mixture) -> Outcome {
    // The oracle curve on standard-normal data is ᾱ_t.
    let normal = DataSource::Gmm(GmmDensity::standard_normal(2));
    let family = normal.oracle_family(&m.schedule).unwrap();
    let ts = curve_ts(m.schedule.steps());
    let curve = oracle_mse_at(&family, &normal, &ts, 2000, EVAL_SEED).map_err(err)?;
    let mut oracle_ok = true;
    let mut worst_z = 0.0f64;
    for p in &curve {
        let ab = m.schedule.alpha_bar(p.t).unwrap();
        let z = (p.mse - ab).abs() / p.stderr.max(1e-12);
        worst_z = worst_z.max(z);
        oracle_ok &= z <= 5.0;
    }

    let both = m.both.classifier(Default::default()).map_err(err)?;
    let family = m.data.oracle_family(&m.schedule).unwrap();
    let model = denoising_mse_at(&both, &m.schedule, &m.data, &ts, 250, EVAL_SEED).map_err(err)?;
    let oracle = oracle_mse_at(&family, &m.data, &ts, 250, EVAL_SEED).map_err(err)?;
    let (ratio, ratio_of_means) = mse_ratio(&model, &oracle);
    Ok((
        oracle_ok && ratio <= 1.15,
        format!(
            "model/oracle mse, mean over t {ratio:.3} (≤ 1.15; ratio of means {ratio_of_means:.3}); \
             standard-normal oracle vs ᾱ_t worst |z| {worst_z:.2} (≤ 5)"
        ),
    ))
}

const SAMPLING_STEPS: usize = 10_000;

fn criterion_9(m: &Mixture) -> Outcome {
    let start = Instant::now();
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED + 9);
    let truth = m.data.sample(&mut rng, 10_000);
    // Sampling needs a sharper denoiser than the ablation budget gives, so
    // this criterion trains its own models on a larger budget.
    let budget = |spec| {
        let mut c = mixture_config(spec, LossMode::Both);
        c.steps = SAMPLING_STEPS;
        c.log_every = SAMPLING_STEPS;
        c
    };
    let (both, _) = train(&budget(*m.schedule.spec()), &m.data).map_err(err)?;
    let both = both.classifier(Default::default()).map_err(err)?;
    let ddpm = sample(
        &both,
        &m.schedule,
        &SamplerConfig::new(SamplerKind::Ddpm, n, 91),
    )
    .map_err(err)?;
    let ddim = sample(
        &both,
        &m.schedule,
        &SamplerConfig::new(SamplerKind::Ddim, n, 92).with_steps(50),
    )
    .map_err(err)?;
    let p_ddpm = energy_permutation_test(ddpm.view(), truth.view(), 200, 1)
        .map_err(err)?
        .p_value;
    let p_ddim = energy_permutation_test(ddim.view(), truth.view(), 200, 2)
        .map_err(err)?
        .p_value;

    let ot_spec = ScheduleSpec::new(ScheduleKind::Ot, 1000);
    let ot_schedule = ot_spec.build().map_err(err)?;
    let (ot, _) = train(&budget(ot_spec), &m.data).map_err(err)?;
    let ot = ot.classifier(Default::default()).map_err(err)?;
    let ot_run = |steps| {
        sample(
            &ot,
            &ot_schedule,
            &SamplerConfig::new(SamplerKind::OtEuler, n, 93).with_steps(steps),
        )
        .map_err(err)
    };
    let (x50, x250, x1000) = (ot_run(50)?, ot_run(250)?, ot_run(1000)?);
    let ed = |a: &Array2<f64>, b: &Array2<f64>| {
        cdm_core::eval::energy_distance(a.view(), b.view()).map_err(err)
    };
    let (ed_50, ed_250) = (ed(&x50, &x1000)?, ed(&x250, &x1000)?);
    let p_self = energy_permutation_test(x250.view(), x1000.view(), 200, 3)
        .map_err(err)?
        .p_value;
    let converging = ed_250 < ed_50 && p_self > 0.01;
    let p_ot = energy_permutation_test(x1000.view(), truth.view(), 200, 4)
        .map_err(err)?
        .p_value;

    let secs = start.elapsed().as_secs_f64();
    let pass = p_ddpm > 0.01 && p_ddim > 0.01 && converging && p_ot > 0.01;
    Ok((
        pass,
        format!(
            "p-values vs 10^4 true samples (> 0.01): ddpm-1000 {p_ddpm:.3}, ddim-50 {p_ddim:.3}, ot_euler-1000 {p_ot:.3}; \
             ot self-convergence ed(250,1000) {ed_250:.2e} < ed(50,1000) {ed_50:.2e}, p {p_self:.3}; \
             {SAMPLING_STEPS} training steps; {secs:.0}s"
        ),
    ))
}

fn criterion_10(m: &Mixture) -> Outcome {
    let counted = CountingClassifier::new(m.both.classifier(Default::default()).map_err(err)?);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = m.data.sample(&mut rng, 500);
    nll_bits_per_dim(&counted, &m.schedule, x.view(), 0).map_err(err)?;
    let (fwd, grad) = (counted.forward_evals(), counted.gradient_evals());
    Ok((
        fwd == 500 && grad == 0,
        format!(
            "500 points: {fwd} forward evaluations, {grad} gradient evaluations (expected 500, 0)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Schedule diagnostic (criterion 11)

fn criterion_11() -> Outcome {
    let data = DataSource::from_spec(&DataSpec::Gmm(mixture_spec()), None).map_err(err)?;
    let mut variances = Vec::new();
    for spec in [
        short_linear(50),
        ScheduleSpec::new(ScheduleKind::TreUniform, 50),
    ] {
        let (ck, _) = train(&mixture_config(spec, LossMode::Both), &data).map_err(err)?;
        let clf = ck.classifier(Default::default()).map_err(err)?;
        let schedule = spec.build().map_err(err)?;
        let acc = per_t_accuracy(&clf, &schedule, &data, 500, EVAL_SEED).map_err(err)?;
        variances.push(variance(&acc));
    }
    Ok((
        variances[1] < variances[0],
        format!(
            "per-t accuracy variance, T=50: tre_uniform {:.4} < ddpm_linear {:.4}",
            variances[1], variances[0]
        ),
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("CDM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |id: u32| selected.as_ref().is_none_or(|s| s.contains(&id));

    let names = [
        "classifier-derived denoiser identity",
        "classifier-derived likelihood identity",
        "diffused-mixture score check",
        "parameter gradients of the combined loss",
        "uniform-box likelihood, d=8",
        "correlated-Gaussian likelihood, d=8",
        "loss ablation on a 2D mixture",
        "denoising optimality",
        "sampling fidelity",
        "single network evaluation per likelihood",
        "per-timestep accuracy variance by schedule",
    ];

    let grid = (wanted(1) || wanted(2) || wanted(3)).then(oracle_grid);
    let mut mixture: Option<Result<Mixture, String>> = None;
    let mut failures = 0;
    for id in 1..=11u32 {
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match id {
            1 => criterion_1(grid.as_ref().unwrap()),
            2 => criterion_2(grid.as_ref().unwrap()),
            3 => criterion_3(grid.as_ref().unwrap()),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7..=10 => {
                let m = mixture.get_or_insert_with(train_mixture);
                match m {
                    Ok(m) => match id {
                        7 => criterion_7(m),
                        8 => criterion_8(m),
                        9 => criterion_9(m),
                        _ => criterion_10(m),
                    },
                    Err(e) => Err(format!("training failed: {e}")),
                }
            }
            _ => criterion_11(),
        };
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {id:>2}: {} | {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            names[id as usize - 1]
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        if std::env::var("CDM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    } else {
        println!("all selected criteria passed");
    }
}
