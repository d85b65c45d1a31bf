//! The interface every noise-level classifier offers to the denoising,
//! likelihood, sampling and evaluation code: the trained network, the
//! closed-form oracle, and instrumentation wrappers.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::Result;
use crate::net::ClassifierNet;

pub trait NoiseClassifier {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn noise_class_index(&self) -> usize {
        self.num_classes() - 1
    }

    /// Logits (log-posteriors up to a per-row constant), one row per input.
    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// `F(x, t) = f(x)[K] − f(x)[t]` and its input gradient, per row.
    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)>;
}

impl NoiseClassifier for ClassifierNet {
    fn input_dim(&self) -> usize {
        ClassifierNet::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        ClassifierNet::num_classes(self)
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_batch(x)
    }

    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.contrast_gradient_batch(x, ts)
    }
}

impl<C: NoiseClassifier + ?Sized> NoiseClassifier for &C {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).logits(x)
    }

    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        (**self).contrast_gradient(x, ts)
    }
}

/// Counts network evaluations per input row.
#[derive(Debug)]
pub struct CountingClassifier<C> {
    inner: C,
    forward_rows: AtomicUsize,
    forward_calls: AtomicUsize,
    gradient_rows: AtomicUsize,
}

impl<C> CountingClassifier<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            forward_rows: AtomicUsize::new(0),
            forward_calls: AtomicUsize::new(0),
            gradient_rows: AtomicUsize::new(0),
        }
    }

    /// Rows passed through `logits`.
    pub fn forward_evals(&self) -> usize {
        self.forward_rows.load(Ordering::Relaxed)
    }

    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Rows passed through `contrast_gradient`.
    pub fn gradient_evals(&self) -> usize {
        self.gradient_rows.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forward_rows.store(0, Ordering::Relaxed);
        self.forward_calls.store(0, Ordering::Relaxed);
        self.gradient_rows.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: NoiseClassifier> NoiseClassifier for CountingClassifier<C> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        self.forward_rows.fetch_add(x.nrows(), Ordering::Relaxed);
        self.inner.logits(x)
    }

    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.gradient_rows.fetch_add(x.nrows(), Ordering::Relaxed);
        self.inner.contrast_gradient(x, ts)
    }
}

/// Constant logits: the posterior is uniform over classes everywhere, which
/// is the exact noise-level posterior for standard-normal data.
#[derive(Debug, Clone, Copy)]
pub struct UniformClassifier {
    pub dim: usize,
    pub classes: usize,
}

impl NoiseClassifier for UniformClassifier {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros((x.nrows(), self.classes)))
    }

    fn contrast_gradient(
        &self,
        x: ArrayView2<f64>,
        _ts: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        Ok((Array1::zeros(x.nrows()), Array2::zeros(x.raw_dim())))
    }
}
