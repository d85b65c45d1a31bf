//! Closed-form ground truth for toy densities: diffused densities, optimal
//! noise-level posteriors, optimal denoisers and exact likelihoods, plus the
//! numerical verifiers built on them.

mod density;
mod family;
mod verify;

pub use density::{
    log_sum_exp, std_normal_logpdf, BoxLogPdf, GmmDensity, GmmSpec, UniformBoxDensity,
    COVARIANCE_FLOOR,
};
pub use family::{
    diffused_gmm, oracle_denoiser, oracle_posterior, BoxFamily, DiffusedFamily, GmmFamily,
    OracleClassifier,
};
pub use verify::{
    gradcheck, tweedie_check, verify_theorem1, verify_theorem2, GradientMode, VerifyReport,
};

/// Log density of the uniform box at `x`.
pub fn uniform_box_logpdf(density: &UniformBoxDensity, x: ndarray::ArrayView1<f64>) -> BoxLogPdf {
    density.logpdf(x)
}

/// Log density of the mixture at `x`.
pub fn gmm_logpdf(gmm: &GmmDensity, x: ndarray::ArrayView1<f64>) -> f64 {
    gmm.logpdf(x)
}

/// `max(|a − b|) / max(|b|, 1)`: relative error with a unit floor so that
/// values near zero are compared absolutely.
pub fn floored_rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `‖a − b‖ / max(‖b‖, 1)` over vectors.
pub fn floored_rel_error_vec(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / b.dot(&b).sqrt().max(1.0)
}
