//! The noise-level classifier: a fully connected network mapping an input
//! vector to one logit per diffusion class.
//!
//! Besides the forward pass the network exposes the input gradient of the
//! contrast `F(x, t) = f(x)[K] − f(x)[t]` (with `K` the pure-noise class) and
//! parameter gradients of losses that contain that input gradient. The
//! latter are computed by reverse-differentiating the explicit backward pass
//! (backward-of-backward), which needs the second derivative of the
//! activation.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z * sigmoid(z)`.
    Silu,
    Tanh,
    Softplus,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Silu, Activation::Tanh, Activation::Softplus];

    /// Value, first and second derivative at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Silu => {
                let s = sigmoid(z);
                let f = z * s;
                let d1 = s * (1.0 + z * (1.0 - s));
                let d2 = s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
                (f, d1, d2)
            }
            Activation::Tanh => {
                let y = z.tanh();
                let d1 = 1.0 - y * y;
                (y, d1, -2.0 * y * d1)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                let f = z.max(0.0) + (-z.abs()).exp().ln_1p();
                (f, s, s * (1.0 - s))
            }
        }
    }

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture descriptor, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    pub cumsum_head: bool,
    /// Fixed factor applied to the input before the first layer.
    #[serde(default = "unit")]
    pub input_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl NetSpec {
    /// Three hidden layers of width 256 with SiLU.
    pub fn default_for(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256, 256, 256],
            num_classes,
            activation: Activation::Silu,
            cumsum_head: false,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(CdmError::InvalidConfig(format!(
                "input_scale must be positive and finite, got {}",
                self.input_scale
            )));
        }
        if self.input_dim == 0 {
            return Err(CdmError::InvalidConfig("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(CdmError::InvalidConfig(
                "num_classes must be at least 2".into(),
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(CdmError::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out × fan_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter set (or a gradient with the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| Layer {
                weight: Array2::zeros((fan_out, fan_in)),
                bias: Array1::zeros(fan_out),
            })
            .collect();
        Params { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-layer weight matrices (row-major) followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(CdmError::DimensionMismatch {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    /// Mutable iteration over every scalar, in flat order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Recorded intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `acts[0]` is the input; `acts[l]` the output of hidden layer `l`.
    acts: Vec<Array2<f64>>,
    /// First and second activation derivatives at each hidden pre-activation.
    d1: Vec<Array2<f64>>,
    d2: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl ForwardTape {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }
}

/// Forward values plus the backward pass that produced an input gradient,
/// enough to differentiate a function of that gradient w.r.t. parameters.
#[derive(Debug, Clone)]
pub struct Tape {
    forward: ForwardTape,
    ts: Vec<usize>,
    /// Adjoints w.r.t. each hidden layer output (`adj_h[l]` for layer `l`,
    /// index 0 unused) from the input-gradient backward pass.
    adj_h: Vec<Array2<f64>>,
    /// Adjoints w.r.t. each hidden pre-activation.
    adj_z: Vec<Array2<f64>>,
    input_grad: Array2<f64>,
}

impl Tape {
    pub fn logits(&self) -> &Array2<f64> {
        self.forward.logits()
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.ts
    }

    pub fn input_grad(&self) -> &Array2<f64> {
        &self.input_grad
    }

    /// `F(x, t) = f(x)[K] − f(x)[t]` per row.
    pub fn contrast(&self) -> Array1<f64> {
        let logits = self.logits();
        let k = logits.ncols() - 1;
        Array1::from_iter(
            self.ts
                .iter()
                .enumerate()
                .map(|(i, &t)| logits[[i, k]] - logits[[i, t]]),
        )
    }
}

/// Weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub mse: f64,
}

/// A training batch of diffused samples.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// Diffused inputs, one per row.
    pub xt: Array2<f64>,
    pub ts: Vec<usize>,
    pub eps: Array2<f64>,
    /// Noise coefficient used to diffuse each row (√(1−ᾱ_t), or t/T for ot).
    pub noise_coef: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `weights.ce * ce + weights.mse * mse`.
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    pub accuracy: f64,
    pub grads: Params,
}

#[derive(Debug, Clone)]
pub struct ClassifierNet {
    spec: NetSpec,
    params: Params,
}

impl ClassifierNet {
    /// Fan-in scaled Gaussian weights, zero biases, zero head.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::zeros(&spec);
        let n_layers = params.layers.len();
        for layer in params.layers.iter_mut().take(n_layers - 1) {
            let std = 1.0 / (layer.weight.ncols() as f64).sqrt();
            layer.weight.iter_mut().for_each(|w| {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            });
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: NetSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        let expected = Params::zeros(&spec);
        let same = expected.layers.len() == params.layers.len()
            && expected
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len());
        if !same {
            return Err(CdmError::DimensionMismatch {
                expected: expected.len(),
                got: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn noise_class_index(&self) -> usize {
        self.spec.num_classes - 1
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(CdmError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn check_timesteps(&self, ts: &[usize], rows: usize) -> Result<()> {
        if ts.len() != rows {
            return Err(CdmError::DimensionMismatch {
                expected: rows,
                got: ts.len(),
            });
        }
        let k = self.noise_class_index();
        if let Some(&t) = ts.iter().find(|&&t| t > k) {
            return Err(CdmError::TimestepOutOfRange { t, max: k });
        }
        Ok(())
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<ForwardTape> {
        self.check_input(&x)?;
        let act = self.spec.activation;
        let n_hidden = self.params.layers.len() - 1;
        let mut acts = Vec::with_capacity(n_hidden + 1);
        let mut d1s = Vec::with_capacity(n_hidden);
        let mut d2s = Vec::with_capacity(n_hidden);
        acts.push(&x * self.spec.input_scale);
        for layer in &self.params.layers[..n_hidden] {
            let mut z = acts.last().unwrap().dot(&layer.weight.t());
            z += &layer.bias;
            let mut d1 = Array2::zeros(z.raw_dim());
            let mut d2 = Array2::zeros(z.raw_dim());
            Zip::from(&mut z)
                .and(&mut d1)
                .and(&mut d2)
                .for_each(|z, a, b| {
                    let (f, f1, f2) = act.eval(*z);
                    *z = f;
                    *a = f1;
                    *b = f2;
                });
            acts.push(z);
            d1s.push(d1);
            d2s.push(d2);
        }
        let head = &self.params.layers[n_hidden];
        let mut logits = acts.last().unwrap().dot(&head.weight.t());
        logits += &head.bias;
        if self.spec.cumsum_head {
            prefix_sum_rows(&mut logits);
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(CdmError::non_finite(format!(
                "logits (row {}); parameters have diverged",
                pos / logits.ncols()
            )));
        }
        Ok(ForwardTape {
            acts,
            d1: d1s,
            d2: d2s,
            logits,
        })
    }

    /// Batched logits, one row per input row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(x)?.logits)
    }

    pub fn forward_logits(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let x2 = x.insert_axis(Axis(0));
        Ok(self.forward_batch(x2)?.row(0).to_owned())
    }

    /// `∇_x F(x, t)` per row, with the tape needed to differentiate it
    /// further w.r.t. parameters.
    pub fn input_gradient_batch(&self, x: ArrayView2<f64>, ts: &[usize]) -> Result<Tape> {
        self.check_timesteps(ts, x.nrows())?;
        let forward = self.forward_tape(x)?;
        let n_hidden = self.params.layers.len() - 1;
        let head = &self.params.layers[n_hidden];

        // Adjoint of F w.r.t. the last hidden output: head_adjoint(t) · W_head.
        let mut adj = self.head_pullback(&head.weight, ts);
        let mut adj_h = vec![Array2::zeros((0, 0)); n_hidden + 1];
        let mut adj_z = vec![Array2::zeros((0, 0)); n_hidden + 1];
        for l in (1..=n_hidden).rev() {
            let az = &adj * &forward.d1[l - 1];
            let next = az.dot(&self.params.layers[l - 1].weight);
            adj_h[l] = adj;
            adj_z[l] = az;
            adj = next;
        }
        Ok(Tape {
            forward,
            ts: ts.to_vec(),
            adj_h,
            adj_z,
            input_grad: adj * self.spec.input_scale,
        })
    }

    /// `F(x, t)` and `∇_x F` per row. Only the head rows that `F` depends on
    /// are touched, so this is much cheaper than a full forward pass when
    /// there are many classes.
    pub fn contrast_gradient_batch(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_input(&x)?;
        self.check_timesteps(ts, x.nrows())?;
        let act = self.spec.activation;
        let n_hidden = self.params.layers.len() - 1;
        let mut h = &x * self.spec.input_scale;
        let mut d1s = Vec::with_capacity(n_hidden);
        for layer in &self.params.layers[..n_hidden] {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            let mut d1 = Array2::zeros(z.raw_dim());
            Zip::from(&mut z).and(&mut d1).for_each(|z, a| {
                let (f, f1, _) = act.eval(*z);
                *z = f;
                *a = f1;
            });
            d1s.push(d1);
            h = z;
        }
        let head = &self.params.layers[n_hidden];
        let pull = self.head_pullback(&head.weight, ts);
        let bias = head.bias.view().insert_axis(Axis(1)).to_owned();
        let pull_b = self.head_pullback(&bias, ts);
        let f =
            Array1::from_iter((0..ts.len()).map(|i| pull.row(i).dot(&h.row(i)) + pull_b[[i, 0]]));
        let mut adj = pull;
        for l in (1..=n_hidden).rev() {
            adj = (&adj * &d1s[l - 1]).dot(&self.params.layers[l - 1].weight);
        }
        adj *= self.spec.input_scale;
        if let Some(pos) = f.iter().position(|v| !v.is_finite()) {
            return Err(CdmError::non_finite(format!(
                "contrast (row {pos}); parameters have diverged"
            )));
        }
        Ok((f, adj))
    }

    pub fn input_gradient(&self, x: ArrayView1<f64>, t: usize) -> Result<(Array1<f64>, Tape)> {
        let tape = self.input_gradient_batch(x.insert_axis(Axis(0)), &[t])?;
        Ok((tape.input_grad.row(0).to_owned(), tape))
    }

    /// Rows `a_t · W` where `a_t` is the adjoint of `F(·, t)` w.r.t. the raw
    /// head outputs: `e_K − e_t`, or with the cumsum head the indicator of
    /// `j > t`.
    fn head_pullback(&self, w: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let k = self.noise_class_index();
        let width = w.ncols();
        let mut out = Array2::zeros((ts.len(), width));
        if self.spec.cumsum_head {
            // suffix[j] = Σ_{i ≥ j} W[i], suffix[K+1] = 0.
            let mut suffix = Array2::zeros((k + 2, width));
            for j in (0..=k).rev() {
                let next = suffix.row(j + 1).to_owned();
                suffix.row_mut(j).assign(&(&next + &w.row(j)));
            }
            for (i, &t) in ts.iter().enumerate() {
                out.row_mut(i).assign(&suffix.row(t + 1));
            }
        } else {
            for (i, &t) in ts.iter().enumerate() {
                if t != k {
                    out.row_mut(i).assign(&(&w.row(k) - &w.row(t)));
                }
            }
        }
        out
    }

    /// Transpose of [`Self::head_pullback`]: accumulates `Σ_i a_{t_i} ⊗ v_i`
    /// into the head weight gradient.
    fn head_pullback_transpose(&self, grad_w: &mut Array2<f64>, ts: &[usize], v: &Array2<f64>) {
        let k = self.noise_class_index();
        if self.spec.cumsum_head {
            // grad_w[j] += Σ_{i : t_i < j} v_i.
            let mut per_t = Array2::<f64>::zeros((k + 1, v.ncols()));
            for (i, &t) in ts.iter().enumerate() {
                let mut row = per_t.row_mut(t);
                row += &v.row(i);
            }
            let mut running = Array1::<f64>::zeros(v.ncols());
            for j in 1..=k {
                running += &per_t.row(j - 1);
                let mut row = grad_w.row_mut(j);
                row += &running;
            }
        } else {
            for (i, &t) in ts.iter().enumerate() {
                if t != k {
                    let mut row = grad_w.row_mut(k);
                    row += &v.row(i);
                    let mut row = grad_w.row_mut(t);
                    row -= &v.row(i);
                }
            }
        }
    }

    /// Combined loss `ce·CE + mse·MSE` and its parameter gradient.
    ///
    /// CE is the batch mean of `−log softmax(f(x_t))[t]`. MSE is the batch
    /// mean of the per-coordinate mean of `(eps − eps_hat)²` with
    /// `eps_hat = c_t (∇_x F(x_t, t) + x_t)`. Its gradient flows through the
    /// input gradient, so it is obtained by reverse-differentiating the
    /// backward pass recorded in the tape.
    pub fn loss_and_param_grads(
        &self,
        batch: &LossBatch,
        weights: LossWeights,
    ) -> Result<LossOutput> {
        let b = batch.xt.nrows();
        if b == 0 {
            return Err(CdmError::InvalidConfig("empty batch".into()));
        }
        if batch.eps.dim() != batch.xt.dim() || batch.noise_coef.len() != b {
            return Err(CdmError::DimensionMismatch {
                expected: b,
                got: batch.noise_coef.len(),
            });
        }
        let d = self.spec.input_dim;
        let tape = self.input_gradient_batch(batch.xt.view(), &batch.ts)?;
        let logits = tape.logits();
        let n_hidden = self.params.layers.len() - 1;
        let mut grads = self.params.zeros_like();

        // Cross-entropy part.
        let mut ce_sum = 0.0;
        let mut correct = 0usize;
        let mut adj_logits = Array2::<f64>::zeros(logits.raw_dim());
        for (i, &t) in batch.ts.iter().enumerate() {
            let row = logits.row(i);
            let lsm = log_softmax(row);
            let nll = -lsm[t];
            if !nll.is_finite() {
                return Err(CdmError::non_finite(format!(
                    "cross-entropy at sample {i} (t={t})"
                )));
            }
            ce_sum += nll;
            if argmax(row) == t {
                correct += 1;
            }
            let scale = weights.ce / b as f64;
            let mut out = adj_logits.row_mut(i);
            Zip::from(&mut out)
                .and(&lsm)
                .for_each(|o, &l| *o = scale * l.exp());
            out[t] -= scale;
        }
        let ce = ce_sum / b as f64;
        if self.spec.cumsum_head {
            suffix_sum_rows(&mut adj_logits);
        }

        // MSE part and its adjoint w.r.t. the input gradient.
        let mut mse_sum = 0.0;
        let mut adj_g = Array2::<f64>::zeros((b, d));
        for i in 0..b {
            let c = batch.noise_coef[i];
            let g = tape.input_grad.row(i);
            let x = batch.xt.row(i);
            let e = batch.eps.row(i);
            let mut sq = 0.0;
            let mut out = adj_g.row_mut(i);
            for j in 0..d {
                let r = c * (g[j] + x[j]) - e[j];
                sq += r * r;
                out[j] = weights.mse * 2.0 * c * r / (b * d) as f64;
            }
            let m = sq / d as f64;
            if !m.is_finite() {
                return Err(CdmError::non_finite(format!(
                    "denoising loss at sample {i} (t={})",
                    batch.ts[i]
                )));
            }
            mse_sum += m;
        }
        let mse = mse_sum / b as f64;

        // Reverse through the input-gradient backward pass, collecting
        // adjoints that feed back into the hidden pre-activations.
        let mut inject: Vec<Option<Array2<f64>>> = vec![None; n_hidden + 1];
        if weights.mse != 0.0 {
            let mut adj = adj_g * self.spec.input_scale;
            for l in 1..=n_hidden {
                let w = &self.params.layers[l - 1].weight;
                // adj_h[l-1] = adj_z[l] · W_l
                grads.layers[l - 1].weight += &tape.adj_z[l].t().dot(&adj);
                let adj_az = adj.dot(&w.t());
                let mut zbar = &adj_az * &tape.forward.d2[l - 1];
                zbar *= &tape.adj_h[l];
                inject[l] = Some(zbar);
                adj = &adj_az * &tape.forward.d1[l - 1];
            }
            self.head_pullback_transpose(&mut grads.layers[n_hidden].weight, &batch.ts, &adj);
        }

        // Ordinary reverse pass through the forward computation.
        let acts = &tape.forward.acts;
        grads.layers[n_hidden].weight += &adj_logits.t().dot(&acts[n_hidden]);
        grads.layers[n_hidden].bias += &adj_logits.sum_axis(Axis(0));
        let mut adj_h = adj_logits.dot(&self.params.layers[n_hidden].weight);
        for l in (1..=n_hidden).rev() {
            let mut zbar = &adj_h * &tape.forward.d1[l - 1];
            if let Some(extra) = &inject[l] {
                zbar += extra;
            }
            grads.layers[l - 1].weight += &zbar.t().dot(&acts[l - 1]);
            grads.layers[l - 1].bias += &zbar.sum_axis(Axis(0));
            if l > 1 {
                adj_h = zbar.dot(&self.params.layers[l - 1].weight);
            }
        }

        let loss = weights.ce * ce + weights.mse * mse;
        if !loss.is_finite() {
            return Err(CdmError::non_finite("combined loss"));
        }
        Ok(LossOutput {
            loss,
            ce,
            mse,
            accuracy: correct as f64 / b as f64,
            grads,
        })
    }
}

/// Max-shifted log-softmax.
pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn prefix_sum_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mut acc = 0.0;
        row.iter_mut().for_each(|v| {
            acc += *v;
            *v = acc;
        });
    }
}

fn suffix_sum_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mut acc = 0.0;
        for v in row.slice_mut(s![..;-1]).iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
}
