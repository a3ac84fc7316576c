//! Analytic denoisers and moment statistics shared by the sampling tests and
//! the acceptance suite.

use accomp_core::diffusion::{sample, ConditioningBundle, Denoiser, SamplerConfig};
use accomp_core::nnkit::Tensor;
use accomp_core::Result;

/// Exact posterior mean for data `N(mu, s²I)` under additive noise `σ`.
pub struct GaussianOracle {
    pub mu: Vec<f64>,
    pub s: f64,
}

impl Denoiser<f64> for GaussianOracle {
    fn channels(&self) -> usize {
        self.mu.len()
    }

    fn denoise(
        &self,
        x: &Tensor<f64>,
        sigma: f64,
        _: Option<&Tensor<f64>>,
        _: Option<&Tensor<f64>>,
    ) -> Result<Tensor<f64>> {
        let d = self.mu.len();
        let gain = self.s * self.s / (self.s * self.s + sigma * sigma);
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let m = self.mu[i % d];
            *v = m + gain * (*v - m);
        }
        Ok(out)
    }
}

impl GaussianOracle {
    pub fn eight_dim() -> Self {
        Self {
            mu: vec![0.5, -1.0, 2.0, 0.0, -0.25, 1.5, -2.0, 0.75],
            s: 0.7,
        }
    }
}

/// Per-dimension sample mean and variance of `[n, 1, d]` draws.
pub fn moments(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = *x.shape().last().unwrap();
    let n = x.len() / d;
    let mut mean = vec![0.0; d];
    for (i, v) in x.data().iter().enumerate() {
        mean[i % d] += v / n as f64;
    }
    let mut var = vec![0.0; d];
    for (i, v) in x.data().iter().enumerate() {
        var[i % d] += (v - mean[i % d]).powi(2) / (n - 1) as f64;
    }
    (mean, var)
}

pub struct MomentError {
    /// Largest `|mean − μ| / s` over dimensions.
    pub mean: f64,
    /// Largest `|var / s² − 1|` over dimensions.
    pub var: f64,
}

impl MomentError {
    pub fn total(&self) -> f64 {
        self.mean + self.var
    }
}

pub fn oracle_moment_error(oracle: &GaussianOracle, cfg: &SamplerConfig<f64>, n: usize) -> MomentError {
    let x = sample(&ConditioningBundle::unconditional(), cfg, oracle, n, 1).unwrap();
    let (mean, var) = moments(&x);
    let s2 = oracle.s * oracle.s;
    MomentError {
        mean: mean
            .iter()
            .zip(&oracle.mu)
            .map(|(m, mu)| (m - mu).abs() / oracle.s)
            .fold(0.0, f64::max),
        var: var.iter().map(|v| (v / s2 - 1.0).abs()).fold(0.0, f64::max),
    }
}
