//! Training loop: uniform timestep draws, forward diffusion, the combined
//! classification + denoising loss, Adam and an exponential moving average.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{DataSource, DataSpec};
use crate::error::{CdmError, Result};
use crate::net::{Activation, ClassifierNet, LossBatch, LossWeights, NetSpec, Params};
use crate::schedule::{NoiseSchedule, ScheduleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Both,
    CeOnly,
    MseOnly,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "ce_only" => Ok(Self::CeOnly),
            "mse_only" => Ok(Self::MseOnly),
            other => Err(CdmError::InvalidConfig(format!(
                "unknown loss mode '{other}' (expected both, ce_only or mse_only)"
            ))),
        }
    }

    /// Term weights; the combined loss is `w_ce·CE + MSE`.
    pub fn weights(self, w_ce: f64) -> LossWeights {
        match self {
            Self::Both => LossWeights { ce: w_ce, mse: 1.0 },
            Self::CeOnly => LossWeights { ce: w_ce, mse: 0.0 },
            Self::MseOnly => LossWeights { ce: 0.0, mse: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub cumsum_head: bool,
    /// Fixed factor applied to the input before the first layer.
    pub input_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            activation: Activation::Silu,
            cumsum_head: false,
            input_scale: 1.0,
        }
    }
}

impl NetConfig {
    pub fn to_spec(&self, input_dim: usize, num_classes: usize) -> NetSpec {
        NetSpec {
            input_dim,
            hidden: self.hidden.clone(),
            num_classes,
            activation: self.activation,
            cumsum_head: self.cumsum_head,
            input_scale: self.input_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: usize,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
            warmup_steps: 0,
            grad_clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = if self.warmup_steps > 0 && step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        let decay = match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
            }
        };
        self.lr * warm * decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_w_ce")]
    pub w_ce: f64,
    #[serde(default)]
    pub loss_mode: LossMode,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    /// Rows per metrics interval.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub net: NetConfig,
    pub data: DataSpec,
}

fn default_steps() -> usize {
    5000
}

fn default_batch_size() -> usize {
    256
}

fn default_w_ce() -> f64 {
    0.001
}

fn default_ema_decay() -> f64 {
    0.9999
}

fn default_log_every() -> usize {
    100
}

impl TrainConfig {
    pub fn new(schedule: ScheduleSpec, data: DataSpec) -> Self {
        Self {
            seed: 0,
            steps: default_steps(),
            batch_size: default_batch_size(),
            w_ce: default_w_ce(),
            loss_mode: LossMode::Both,
            ema_decay: default_ema_decay(),
            log_every: default_log_every(),
            optimizer: OptimizerConfig::default(),
            schedule,
            net: NetConfig::default(),
            data,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CdmError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdmError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CdmError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CdmError::InvalidConfig(m.into()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if !(self.w_ce >= 0.0) || !self.w_ce.is_finite() {
            return bad("w_ce must be nonnegative");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
        {
            return bad("optimizer needs lr > 0, betas in [0, 1) and eps > 0");
        }
        if matches!(o.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        self.schedule.build()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Params,
    v: Params,
    steps: u64,
}

impl Adam {
    pub fn new(like: &Params) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            steps: 0,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params, lr: f64, cfg: &OptimizerConfig) {
        self.steps += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.steps as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.steps as i32);
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ema {
    params: Params,
    decay: f64,
}

impl Ema {
    pub fn new(params: &Params, decay: f64) -> Self {
        Self {
            params: params.clone(),
            decay,
        }
    }

    pub fn update(&mut self, params: &Params) {
        let d = self.decay;
        for (e, p) in self.params.values_mut().zip(params.values()) {
            *e = d * *e + (1.0 - d) * p;
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub ce: f64,
    pub mse: f64,
    pub loss: f64,
    pub acc: f64,
}

/// Mean metrics over one logging interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub ce: f64,
    pub mse: f64,
    pub loss: f64,
    pub acc: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
    pub wall_ms: f64,
    pub steps: usize,
    pub config_hash: String,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CdmError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| CdmError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(|e| CdmError::io(path, e))
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}

/// Draws timesteps and noise for a batch of clean samples.
pub fn diffuse_batch<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &Array2<f64>,
    rng: &mut R,
) -> Result<LossBatch> {
    let ts: Vec<usize> = (0..x0.nrows())
        .map(|_| schedule.sample_timestep(rng))
        .collect();
    let eps = Array2::from_shape_simple_fn(x0.raw_dim(), || StandardNormal.sample(rng));
    let xt = schedule.forward_diffuse_batch(x0.view(), &ts, eps.view())?;
    let noise_coef = ts.iter().map(|&t| schedule.noise_coef(t)).collect();
    Ok(LossBatch {
        xt,
        ts,
        eps,
        noise_coef,
    })
}

fn timestep_histogram(ts: &[usize], num_classes: usize) -> String {
    const BINS: usize = 10;
    let mut counts = [0usize; BINS];
    for &t in ts {
        counts[(t * BINS / num_classes).min(BINS - 1)] += 1;
    }
    format!("t histogram over {BINS} equal bins of 0..{num_classes}: {counts:?}")
}

/// One optimizer update on a batch of clean samples.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    net: &mut ClassifierNet,
    adam: &mut Adam,
    ema: &mut Ema,
    x0: &Array2<f64>,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepMetrics> {
    let batch = diffuse_batch(schedule, x0, rng)?;
    let out = net
        .loss_and_param_grads(&batch, config.loss_mode.weights(config.w_ce))
        .map_err(|e| match e {
            CdmError::NonFinite { context } => CdmError::non_finite(format!(
                "{context}; {}",
                timestep_histogram(&batch.ts, schedule.num_classes())
            )),
            other => other,
        })?;
    let mut grads = out.grads;
    if let Some(clip) = config.optimizer.grad_clip {
        let n = grads.norm();
        if n > clip {
            grads.values_mut().for_each(|g| *g *= clip / n);
        }
    }
    adam.update(net.params_mut(), &grads, lr, &config.optimizer);
    ema.update(net.params());
    Ok(StepMetrics {
        ce: out.ce,
        mse: out.mse,
        loss: out.loss,
        acc: out.accuracy,
    })
}

/// Runs the configured number of steps from a fresh initialization seeded
/// by `config.seed`.
pub fn train(config: &TrainConfig, data: &DataSource) -> Result<(Checkpoint, TrainReport)> {
    train_with(config, data, |_| {})
}

/// [`train`] with a callback per metrics row.
pub fn train_with<F: FnMut(&MetricRow)>(
    config: &TrainConfig,
    data: &DataSource,
    mut on_row: F,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let schedule = config.schedule.build()?;
    let spec = config.net.to_spec(data.dim(), schedule.num_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = ClassifierNet::init(spec, &mut rng)?;
    let mut adam = Adam::new(net.params());
    let mut ema = Ema::new(net.params(), config.ema_decay);

    let start = Instant::now();
    let mut rows = Vec::new();
    let mut acc = [0.0f64; 4];
    let mut in_interval = 0usize;
    for step in 0..config.steps {
        let x0 = data.sample(&mut rng, config.batch_size);
        let lr = config.optimizer.lr_at(step, config.steps);
        let m = train_step(
            &mut net, &mut adam, &mut ema, &x0, &schedule, config, lr, &mut rng,
        )
        .map_err(|e| match e {
            CdmError::NonFinite { context } => {
                CdmError::non_finite(format!("training step {step}: {context}"))
            }
            other => other,
        })?;
        for (a, v) in acc.iter_mut().zip([m.ce, m.mse, m.loss, m.acc]) {
            *a += v;
        }
        in_interval += 1;
        if (step + 1) % config.log_every == 0 || step + 1 == config.steps {
            let n = in_interval as f64;
            let row = MetricRow {
                step: step + 1,
                ce: acc[0] / n,
                mse: acc[1] / n,
                loss: acc[2] / n,
                acc: acc[3] / n,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            on_row(&row);
            rows.push(row);
            acc = [0.0; 4];
            in_interval = 0;
        }
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let config_hash = config.hash();
    let meta = CheckpointMeta {
        step: config.steps,
        seed: config.seed,
        config_hash: config_hash.clone(),
        w_ce: config.w_ce,
        loss_mode: config.loss_mode,
        ema_decay: config.ema_decay,
        config: Some(config.clone()),
    };
    let checkpoint = Checkpoint::new(
        config.schedule,
        net.spec().clone(),
        net.params().clone(),
        ema.params().clone(),
        meta,
    )?;
    Ok((
        checkpoint,
        TrainReport {
            rows,
            wall_ms,
            steps: config.steps,
            config_hash,
        },
    ))
}
