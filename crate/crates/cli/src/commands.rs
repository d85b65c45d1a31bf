use std::path::{Path, PathBuf};

use cdm_core::classifier::CountingClassifier;
use cdm_core::data::{read_matrix_csv, OracleFamily};
use cdm_core::eval::{self, MsePoint};
use cdm_core::net::{LossBatch, LossWeights};
use cdm_core::oracle::{self, GmmSpec, GradientMode, VerifyReport};
use cdm_core::sample::{write_samples, SampleFormat};
use cdm_core::{
    Activation, CdmError, Checkpoint, ClassifierNet, DataSource, DataSpec, LossMode, NetSpec,
    NoiseSchedule, ParamSet, SamplerConfig, SamplerKind, ScheduleKind, ScheduleSpec, SigmaChoice,
    TrainConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Mixed into the training seed to get the held-out evaluation seed.
const EVAL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn default_config() -> TrainConfig {
    TrainConfig::new(
        ScheduleSpec::new(ScheduleKind::DdpmLinear, 1000),
        DataSpec::Gmm(default_gmm()),
    )
}

fn default_gmm() -> GmmSpec {
    GmmSpec {
        weights: vec![0.5, 0.5],
        means: vec![vec![-1.5, 0.0], vec![1.5, 0.5]],
        covariances: vec![
            vec![vec![0.3, 0.0], vec![0.0, 0.3]],
            vec![vec![0.2, 0.05], vec![0.05, 0.4]],
        ],
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| CdmError::io(path, e).into())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CdmError::io(dir, e).into())
}

fn load_density(path: &Path) -> Result<DataSource> {
    let text = std::fs::read_to_string(path).map_err(|e| CdmError::io(path, e))?;
    let spec: DataSpec = toml::from_str(&text).map_err(|e| CdmError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(DataSource::from_spec(&spec, path.parent())?)
}

fn checkpoint_data(ck: &Checkpoint) -> Result<DataSource> {
    let cfg = ck.meta.config.as_ref().ok_or_else(|| {
        CliError::Invalid("checkpoint carries no training config; pass --density".into())
    })?;
    Ok(DataSource::from_spec(&cfg.data, None)?)
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub loss_mode: Option<LossMode>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::load(&args.config)?;
    if let Some(m) = args.loss_mode {
        config.loss_mode = m;
    }
    if let Some(s) = args.steps {
        config.steps = s;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    // File paths in the config are relative to the config itself.
    if let DataSpec::File { path } = &mut config.data {
        if path.is_relative() {
            if let Some(dir) = args.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    config.validate()?;
    let data = DataSource::from_spec(&config.data, None)?;
    create_dir(&args.out)?;

    let quiet = args.quiet;
    let (ck, report) = cdm_core::train::train_with(&config, &data, |r| {
        if !quiet {
            eprintln!(
                "step {:>7}  ce {:.4}  mse {:.4}  loss {:.5}  acc {:.4}  {:.1}s",
                r.step,
                r.ce,
                r.mse,
                r.loss,
                r.acc,
                r.wall_ms / 1e3
            );
        }
    })?;
    let ckpt_path = args.out.join("model.ckpt");
    ck.save(&ckpt_path)?;
    report.write_csv(&args.out.join("metrics.csv"))?;

    let schedule = ck.build_schedule()?;
    let eval_seed = config.seed ^ EVAL_SEED_MIX;
    let mut held_out = serde_json::Map::new();
    for which in [ParamSet::Ema, ParamSet::Raw] {
        let clf = ck.classifier(which)?;
        let nll = eval::nll_on_source(&clf, &schedule, &data, 2000, 0, eval_seed)?;
        let cls = eval::classification_metrics(&clf, &schedule, &data, 2000, eval_seed)?;
        let key = match which {
            ParamSet::Ema => "ema",
            ParamSet::Raw => "raw",
        };
        held_out.insert(key.into(), json!({ "nll": nll, "classification": cls }));
    }
    let last = report.last();
    let summary = json!({
        "config_hash": report.config_hash,
        "checkpoint": ckpt_path,
        "checkpoint_sha256": ck.digest()?,
        "steps": report.steps,
        "wall_ms": report.wall_ms,
        "final_train": last,
        "eval_seed": eval_seed,
        "held_out": held_out,
    });
    write_json(&args.out.join("summary.json"), &summary)?;

    if let Some(r) = last {
        println!("train   ce {:.4}  mse {:.4}  acc {:.4}", r.ce, r.mse, r.acc);
    }
    let ema = &held_out["ema"];
    println!(
        "held-out (ema)  ce {:.4} (uniform {:.4})  nll {:.4} bits/dim",
        ema["classification"]["ce"].as_f64().unwrap_or(f64::NAN),
        ema["classification"]["uniform_ce"]
            .as_f64()
            .unwrap_or(f64::NAN),
        ema["nll"]["bits_per_dim"].as_f64().unwrap_or(f64::NAN),
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub sampler: SamplerKind,
    pub steps: Option<usize>,
    pub n: usize,
    pub seed: u64,
    pub format: SampleFormat,
    pub params: ParamSet,
    pub sigma: SigmaChoice,
    pub out: PathBuf,
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let schedule = ck.build_schedule()?;
    let cfg = SamplerConfig {
        sampler: args.sampler,
        steps: args.steps,
        n_samples: args.n,
        seed: args.seed,
        sigma: args.sigma,
    };
    cfg.validate(&schedule)?;
    let clf = CountingClassifier::new(ck.classifier(args.params)?);
    let x = cdm_core::sample(&clf, &schedule, &cfg)?;
    let nfe = clf.gradient_evals() / args.n;
    let side = write_samples(&args.out, &x, args.format, &cfg, nfe)?;
    println!(
        "{}",
        json!({ "out": args.out, "sidecar": side, "n": args.n, "nfe_per_sample": nfe })
    );
    Ok(())
}

pub fn nll(
    checkpoint: &Path,
    data: &Path,
    t: usize,
    params: ParamSet,
    out: Option<&Path>,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let schedule = ck.build_schedule()?;
    let x = read_matrix_csv(data)?;
    if x.nrows() == 0 {
        return Err(CliError::Invalid(format!(
            "{} holds no rows",
            data.display()
        )));
    }
    let clf = CountingClassifier::new(ck.classifier(params)?);
    let summary = eval::nll_bits_per_dim(&clf, &schedule, x.view(), t)?;
    let evals = clf.forward_evals();
    let report = json!({
        "n": summary.n,
        "t": summary.t,
        "nats": summary.nats,
        "nats_stderr": summary.nats_stderr,
        "nats_per_dim": summary.nats_per_dim,
        "bits_per_dim": summary.bits_per_dim,
        "bits_per_dim_stderr": summary.bits_per_dim_stderr,
        "forward_evals": evals,
        "forward_evals_per_point": evals as f64 / summary.n as f64,
    });
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("json serializes")
    );
    if evals != summary.n {
        return Err(CliError::Verification(format!(
            "expected one network evaluation per point, counted {evals} for {} points",
            summary.n
        )));
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub density: Option<PathBuf>,
    pub out: PathBuf,
    pub n_per_t: usize,
    pub t_stride: usize,
    pub bins: usize,
    pub n_class: usize,
    pub n_nll: usize,
    pub seed: u64,
    pub params: ParamSet,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if args.t_stride == 0 {
        return Err(CliError::Invalid("t-stride must be at least 1".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let schedule = ck.build_schedule()?;
    let data = match &args.density {
        Some(p) => load_density(p)?,
        None => checkpoint_data(&ck)?,
    };
    if data.dim() != ck.net.input_dim {
        return Err(CdmError::DimensionMismatch {
            expected: ck.net.input_dim,
            got: data.dim(),
        }
        .into());
    }
    let clf = ck.classifier(args.params)?;
    create_dir(&args.out)?;

    let ts: Vec<usize> = (1..=schedule.steps()).step_by(args.t_stride).collect();
    let model = eval::denoising_mse_at(&clf, &schedule, &data, &ts, args.n_per_t, args.seed)?;
    let family = data.oracle_family(&schedule);
    let oracle_curve = match &family {
        Some(f) => Some(eval::oracle_mse_at(f, &data, &ts, args.n_per_t, args.seed)?),
        None => None,
    };
    write_mse_curve(
        &args.out.join("mse_curve.csv"),
        &model,
        oracle_curve.as_deref(),
    )?;

    let confusion =
        eval::confusion_matrix(&clf, &schedule, &data, args.n_per_t, args.bins, args.seed)?;
    write_confusion(&args.out.join("confusion.csv"), &confusion)?;

    let k = schedule.noise_class_index();
    let profile_ts: Vec<usize> = [0, k / 4, k / 2, 3 * k / 4, k].to_vec();
    let profiles = eval::logit_profiles(&clf, &schedule, &data, &profile_ts, args.seed)?;
    write_json(&args.out.join("logit_profiles.json"), &json!(profiles))?;

    let cls = eval::classification_metrics(&clf, &schedule, &data, args.n_class, args.seed)?;
    let nll = eval::nll_on_source(&clf, &schedule, &data, args.n_nll, 0, args.seed)?;
    let exact_nll = exact_nll(&data, args.n_nll, args.seed);
    let model_mean = model.iter().map(|p| p.mse).sum::<f64>() / model.len() as f64;
    let ratio = oracle_curve.as_ref().map(|o| {
        let (mean_of_ratios, ratio_of_means) = eval::mse_ratio(&model, o);
        json!({ "mean_of_ratios": mean_of_ratios, "ratio_of_means": ratio_of_means })
    });
    let summary = json!({
        "checkpoint": args.checkpoint,
        "seed": args.seed,
        "params": args.params,
        "classification": cls,
        "nll": nll,
        "exact_nll_nats_per_dim": exact_nll,
        "mse_mean_over_t": model_mean,
        "mse_vs_oracle": ratio,
        "confusion_row_entropy": confusion.row_entropies(),
        "unimodal_profiles": profiles.iter().filter(|p| p.unimodal).count(),
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("json serializes")
    );
    Ok(())
}

/// Monte-Carlo estimate of the true per-dimension NLL, when the density is
/// known.
fn exact_nll(data: &DataSource, n: usize, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = data.sample(&mut rng, n.max(1));
    let mut total = 0.0;
    for row in x.rows() {
        total -= data.exact_logpdf(row)?;
    }
    Some(total / (x.nrows() * x.ncols()) as f64)
}

fn write_mse_curve(path: &Path, model: &[MsePoint], oracle: Option<&[MsePoint]>) -> Result<()> {
    let mut text = String::from("t,mse,stderr,oracle_mse,oracle_stderr,ratio\n");
    for (i, p) in model.iter().enumerate() {
        match oracle {
            Some(o) => text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.t,
                p.mse,
                p.stderr,
                o[i].mse,
                o[i].stderr,
                p.mse / o[i].mse
            )),
            None => text.push_str(&format!("{},{},{},,,\n", p.t, p.mse, p.stderr)),
        }
    }
    std::fs::write(path, text).map_err(|e| CdmError::io(path, e).into())
}

fn write_confusion(path: &Path, c: &eval::ConfusionMatrix) -> Result<()> {
    let nb = c.bins.len();
    let mut text = String::from("true_lo,true_hi");
    for (lo, hi) in &c.bins {
        text.push_str(&format!(",pred_{lo}_{hi}"));
    }
    text.push('\n');
    for i in 0..nb {
        let (lo, hi) = c.bins[i];
        text.push_str(&format!("{lo},{hi}"));
        for j in 0..nb {
            text.push_str(&format!(",{}", c.matrix[[i, j]]));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CdmError::io(path, e).into())
}

#[derive(Clone, Copy, Debug)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Tweedie,
    Gradcheck,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::Tweedie => "tweedie",
            Suite::Gradcheck => "gradcheck",
        }
    }

    fn default_tolerance(self) -> f64 {
        match self {
            Suite::Theorem1 => 1e-8,
            Suite::Theorem2 => 1e-10,
            Suite::Tweedie => 1e-6,
            Suite::Gradcheck => 1e-4,
        }
    }
}

pub struct VerifyArgs {
    pub suite: Suite,
    pub density: Option<PathBuf>,
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub points: usize,
    pub seed: u64,
    pub tol: Option<f64>,
}

/// `n` evenly spaced timesteps in `1..=T`.
fn spread_timesteps(big_t: usize, n: usize) -> Vec<usize> {
    let n = n.min(big_t).max(1);
    if n == 1 {
        return vec![big_t];
    }
    let mut ts: Vec<usize> = (0..n).map(|k| 1 + k * (big_t - 1) / (n - 1)).collect();
    ts.dedup();
    ts
}

/// Evaluation points: clean draws, their noisy versions and wide Gaussian
/// points.
fn verify_points(data: &DataSource, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.dim();
    let mut x = data.sample(&mut rng, n);
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        match i % 3 {
            0 => {}
            1 => row
                .iter_mut()
                .for_each(|v| *v += 0.5 * rng.sample::<f64, _>(StandardNormal)),
            _ => {
                for j in 0..d {
                    row[j] = 2.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    x
}

/// Geometric class prior used to exercise the prior-ratio factor.
fn geometric_prior(k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|i| 0.97f64.powi(i as i32)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn verify(args: VerifyArgs) -> Result<()> {
    let tol = args.tol.unwrap_or(args.suite.default_tolerance());
    if args.points == 0 {
        return Err(CliError::Invalid("points must be at least 1".into()));
    }
    let mut details = Vec::new();
    let mut max_err = 0.0f64;
    let mut evaluations = 0usize;
    let mut absorb = |label: String, r: &VerifyReport| {
        max_err = max_err.max(r.max_rel_error);
        evaluations += r.evaluations;
        details.push(json!({ "case": label, "report": r }));
    };

    match args.suite {
        Suite::Gradcheck => {
            for (label, err, evals) in gradcheck_grid(args.seed)? {
                absorb(
                    label,
                    &VerifyReport {
                        max_rel_error: err,
                        mean_rel_error: err,
                        evaluations: evals,
                        worst: None,
                    },
                );
            }
        }
        suite => {
            let data = match &args.density {
                Some(p) => load_density(p)?,
                None => DataSource::Gmm(oracle::GmmDensity::from_spec(&default_gmm())?),
            };
            let schedule = NoiseSchedule::new(ScheduleSpec::new(args.schedule, args.steps))?;
            let family: OracleFamily = data.oracle_family(&schedule).ok_or_else(|| {
                CliError::Invalid(
                    "verification needs a synthetic density with a closed form".into(),
                )
            })?;
            let points = verify_points(&data, args.points, args.seed);
            let ts = spread_timesteps(schedule.steps(), 10);
            match suite {
                Suite::Theorem1 => {
                    let r = oracle::verify_theorem1(
                        &family,
                        None,
                        points.view(),
                        &ts,
                        GradientMode::Analytic,
                    )?;
                    absorb("uniform prior".into(), &r);
                }
                Suite::Theorem2 => {
                    let mut ts2 = vec![0];
                    ts2.extend(&ts);
                    let r = oracle::verify_theorem2(&family, None, points.view(), &ts2)?;
                    absorb("uniform prior".into(), &r);
                    let prior = geometric_prior(schedule.num_classes());
                    let r = oracle::verify_theorem2(&family, Some(&prior), points.view(), &ts2)?;
                    absorb("geometric prior".into(), &r);
                }
                Suite::Tweedie => {
                    let mut ts2 = vec![0];
                    ts2.extend(&ts);
                    let r = oracle::tweedie_check(&family, points.view(), &ts2, 1e-5)?;
                    absorb("central differences".into(), &r);
                }
                Suite::Gradcheck => unreachable!(),
            }
        }
    }

    let pass = max_err <= tol;
    let report = json!({
        "suite": args.suite.name(),
        "pass": pass,
        "tolerance": tol,
        "max_rel_error": max_err,
        "evaluations": evaluations,
        "cases": details,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("json serializes")
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{}: max relative error {max_err:.3e} exceeds {tol:.1e}",
            args.suite.name()
        )))
    }
}

/// Parameter-gradient checks on small random networks of 1 to 3 hidden
/// layers in 2 and 8 dimensions.
fn gradcheck_grid(seed: u64) -> Result<Vec<(String, f64, usize)>> {
    let schedule = NoiseSchedule::new(ScheduleSpec::new(ScheduleKind::TreUniform, 10))?;
    let k = schedule.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for d in [2usize, 8] {
        for depth in 1..=3usize {
            let cumsum = depth == 2;
            let spec = NetSpec {
                input_dim: d,
                hidden: vec![6; depth],
                num_classes: k,
                activation: Activation::ALL[depth - 1],
                cumsum_head: cumsum,
                input_scale: if depth == 3 { 2.5 } else { 1.0 },
            };
            let net = ClassifierNet::init(spec, &mut rng)?;
            let n = 5;
            let x0 = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
            let eps = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
            let ts: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let xt = schedule.forward_diffuse_batch(x0.view(), &ts, eps.view())?;
            let noise_coef = ts.iter().map(|&t| schedule.noise_coef(t)).collect();
            let batch = LossBatch {
                xt,
                ts,
                eps,
                noise_coef,
            };
            let weights = LossWeights { ce: 0.3, mse: 1.0 };
            let err = oracle::gradcheck(&net, &batch, weights, 1e-5)?;
            let count = net.params().len();
            out.push((format!("d={d} hidden={depth} cumsum={cumsum}"), err, count));
        }
    }
    Ok(out)
}
