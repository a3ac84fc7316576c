//! Distribution and pairing metrics over embedding sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Where an embedding set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetLabel {
    Real,
    Generated,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub rows: Vec<Vec<f64>>,
    pub label: SetLabel,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<Vec<f64>>, label: SetLabel) -> Self {
        Self { rows, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `(xᵀy/d + 1)³`.
    CubicPolynomial,
    /// `exp(−‖x − y‖² / (2·bandwidth²))`.
    Gaussian { bandwidth: f64 },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::CubicPolynomial => (dot(x, y) / x.len() as f64 + 1.0).powi(3),
            Kernel::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v.into_iter().sum()
}

fn within(a: &[Vec<f64>], k: Kernel) -> f64 {
    let mut vals = Vec::with_capacity(a.len() * a.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a.iter().enumerate() {
            if i != j {
                vals.push(k.eval(x, y));
            }
        }
    }
    sorted_sum(vals) / (a.len() * (a.len() - 1)) as f64
}

/// Unbiased squared MMD. Kernel sums are accumulated in sorted order, so the
/// result is bitwise symmetric in `(a, b)`.
pub fn mmd2_with(a: &[Vec<f64>], b: &[Vec<f64>], kernel: Kernel) -> Result<f64> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::TooFew {
                what: "mmd2 set",
                needed: 2,
                got: s.len(),
            });
        }
    }
    let mut cross = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            cross.push(kernel.eval(x, y));
        }
    }
    let kab = sorted_sum(cross) / (a.len() * b.len()) as f64;
    Ok(within(a, kernel) + within(b, kernel) - 2.0 * kab)
}

pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    mmd2_with(a, b, Kernel::CubicPolynomial)
}

/// Regularisation added to both covariances.
pub const FRECHET_EPS: f64 = 1e-6;

/// Sample mean and (n−1)-normalised covariance.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::TooFew {
            what: "frechet set",
            needed: 2,
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n);
    let centered = DMatrix::from_fn(rows.len(), d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    Ok((mu, cov))
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if min < -1e-9 * scale {
        return Err(Error::Numerical(format!(
            "{what} is not positive semi-definite: smallest eigenvalue {min:e}"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let trace = roots.sum();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((root, trace))
}

/// `‖μa−μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`, the trace of the root taken via
/// the symmetric matrix `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet_gaussians(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let (root_a, _) = sqrt_psd(cov_a, "covariance a")?;
    let inner = &root_a * cov_b * &root_a;
    let (_, tr_root) = sqrt_psd(&inner, "Σa^1/2 Σb Σa^1/2")?;
    let diff = mu_a - mu_b;
    Ok(diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_root)
}

pub fn frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = gaussian_fit(a)?;
    let (mu_b, cov_b) = gaussian_fit(b)?;
    let reg = DMatrix::identity(cov_a.nrows(), cov_a.ncols()) * FRECHET_EPS;
    frechet_gaussians(&mu_a, &(cov_a + &reg), &mu_b, &(cov_b + reg))
}

/// Distance from each real point to its `k`-th nearest real neighbour.
pub fn knn_radii(real: &[Vec<f64>], k: usize) -> Vec<f64> {
    real.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut d: Vec<f64> = real
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| dist(r, o))
                .collect();
            d.sort_by(|a, b| a.total_cmp(b));
            d[k - 1]
        })
        .collect()
}

/// k-NN manifold density and coverage (open balls).
pub fn density_coverage(real: &[Vec<f64>], gen: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    if k == 0 || real.len() <= k {
        return Err(Error::TooFew {
            what: "real set for density/coverage",
            needed: k + 1,
            got: real.len(),
        });
    }
    if gen.is_empty() {
        return Err(Error::TooFew {
            what: "generated set for density/coverage",
            needed: 1,
            got: 0,
        });
    }
    let radii = knn_radii(real, k);
    if radii.iter().all(|&r| r == 0.0) {
        return Err(Error::InvalidArgument("real set consists of duplicates only".into()));
    }
    let mut hits = 0usize;
    let mut covered = vec![false; real.len()];
    for g in gen {
        for (j, r) in real.iter().enumerate() {
            if dist(g, r) < radii[j] {
                hits += 1;
                covered[j] = true;
            }
        }
    }
    let density = hits as f64 / (k * gen.len()) as f64;
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / real.len() as f64;
    Ok((density, coverage))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Mean cosine similarity of paired description and audio embeddings.
pub fn clap_score(desc: &[Vec<f64>], audio: &[Vec<f64>]) -> Result<f64> {
    if desc.len() != audio.len() {
        return Err(Error::CountMismatch(desc.len(), audio.len()));
    }
    if desc.is_empty() {
        return Err(Error::TooFew {
            what: "clap score pairs",
            needed: 1,
            got: 0,
        });
    }
    let mut total = 0.0;
    for (d, a) in desc.iter().zip(audio) {
        total += cosine(d, a)?;
    }
    Ok(total / desc.len() as f64)
}

fn concat_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect()
}

/// Adherence from the two Fréchet distances: `clamp((d_mis − d_match)/d_mis, 0, 1)`.
pub fn adherence_from_distances(d_match: f64, d_mismatch: f64) -> f64 {
    if !(d_mismatch > 0.0) {
        return 0.0;
    }
    ((d_mismatch - d_match) / d_mismatch).clamp(0.0, 1.0)
}

/// Prompt-adherence stand-in: Fréchet distance of concatenated
/// (context‖candidate) embeddings to real pairs, against the same with
/// candidates cyclically shifted by one position.
pub fn adherence(
    contexts: &[Vec<f64>],
    candidates: &[Vec<f64>],
    real_contexts: &[Vec<f64>],
    real_accompaniments: &[Vec<f64>],
) -> Result<f64> {
    if contexts.len() != candidates.len() {
        return Err(Error::CountMismatch(contexts.len(), candidates.len()));
    }
    if real_contexts.len() != real_accompaniments.len() {
        return Err(Error::CountMismatch(real_contexts.len(), real_accompaniments.len()));
    }
    if contexts.len() < 2 {
        return Err(Error::TooFew {
            what: "adherence pairs",
            needed: 2,
            got: contexts.len(),
        });
    }
    let real = concat_rows(real_contexts, real_accompaniments);
    let matched = concat_rows(contexts, candidates);
    let mut shifted = candidates.to_vec();
    shifted.rotate_left(1);
    let mismatched = concat_rows(contexts, &shifted);
    let d_match = frechet(&matched, &real)?;
    let d_mismatch = frechet(&mismatched, &real)?;
    Ok(adherence_from_distances(d_match, d_mismatch))
}
