//! Inter-channel correlation of pseudo-stereo draws and a rank trend test.

use accomp_core::diffusion::{default_schedule, pseudo_stereo_sample, ConditioningBundle, SamplerConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::oracles::GaussianOracle;

pub const WIDTHS: [f64; 5] = [0.0, 0.2, 0.4, 0.8, 1.0];

/// Mean over `batch` items of the Pearson correlation between the left and
/// right channels, each centred on the oracle mean.
pub fn mean_channel_correlation(oracle: &GaussianOracle, width: f64, seed: u64, batch: usize) -> f64 {
    let mut cfg = SamplerConfig::new(default_schedule(20).unwrap(), seed);
    cfg.stereo_width = width;
    let (l, r) = pseudo_stereo_sample(&ConditioningBundle::unconditional(), &cfg, oracle, batch, 4).unwrap();
    let d = oracle.mu.len();
    let centred = |row: &[f64]| -> Vec<f64> { row.iter().enumerate().map(|(i, v)| v - oracle.mu[i % d]).collect() };
    (0..batch)
        .map(|b| pearson(&centred(l.row(b)), &centred(r.row(b))))
        .sum::<f64>()
        / batch as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman's ρ and the one-sided p-value for a decreasing trend, from the
/// t approximation with `n − 2` degrees of freedom.
pub fn spearman_decreasing(x: &[f64], y: &[f64]) -> (f64, f64) {
    let rho = pearson(&ranks(x), &ranks(y));
    let df = x.len() as f64 - 2.0;
    if rho <= -1.0 {
        return (rho, 0.0);
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let p = StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
    (rho, p)
}

/// Per-width means over seeds, plus the trend test over every (width, seed)
/// observation.
pub struct StereoSweep {
    pub means: Vec<f64>,
    pub rho: f64,
    pub p: f64,
}

pub fn stereo_sweep(oracle: &GaussianOracle, seeds: u64, batch: usize) -> StereoSweep {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut means = Vec::new();
    for &w in &WIDTHS {
        let mut acc = 0.0;
        for seed in 0..seeds {
            let c = mean_channel_correlation(oracle, w, 100 + seed, batch);
            xs.push(w);
            ys.push(c);
            acc += c;
        }
        means.push(acc / seeds as f64);
    }
    let (rho, p) = spearman_decreasing(&xs, &ys);
    StereoSweep { means, rho, p }
}
