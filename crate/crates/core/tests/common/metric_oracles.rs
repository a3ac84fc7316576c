//! Brute-force reference implementations of the metric definitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn poly(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += x[i] * y[i];
    }
    (s / x.len() as f64 + 1.0).powi(3)
}

/// Full kernel matrices with the diagonals removed afterwards.
pub fn mmd2_double_sum(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len() as f64, b.len() as f64);
    let block =
        |p: &[Vec<f64>], q: &[Vec<f64>]| -> f64 { p.iter().flat_map(|x| q.iter().map(move |y| poly(x, y))).sum() };
    let diag = |p: &[Vec<f64>]| -> f64 { p.iter().map(|x| poly(x, x)).sum() };
    (block(a, a) - diag(a)) / (m * (m - 1.0)) + (block(b, b) - diag(b)) / (n * (n - 1.0)) - 2.0 * block(a, b) / (m * n)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exhaustive density/coverage: every (generated, real) pair tested against
/// the real point's k-NN radius.
pub fn density_coverage_enumerated(real: &[Vec<f64>], gen: &[Vec<f64>], k: usize) -> (f64, f64) {
    let radius: Vec<f64> = (0..real.len())
        .map(|i| {
            let mut all: Vec<f64> = (0..real.len())
                .map(|j| if i == j { -1.0 } else { euclid(&real[i], &real[j]) })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all[k]
        })
        .collect();
    let mut count = 0.0;
    for g in gen {
        for (r, rad) in real.iter().zip(&radius) {
            if euclid(g, r) < *rad {
                count += 1.0;
            }
        }
    }
    let covered = real
        .iter()
        .zip(&radius)
        .filter(|(r, rad)| gen.iter().any(|g| euclid(g, r) < **rad))
        .count();
    (count / (k * gen.len()) as f64, covered as f64 / real.len() as f64)
}
