//! Objective evaluation: toy embedder, MMD², Fréchet distance,
//! density/coverage, embedding cosine score and a prompt-adherence stand-in.

pub mod distances;
pub mod embedder;
pub mod report;

pub use distances::{
    adherence, adherence_from_distances, clap_score, cosine, density_coverage, frechet, frechet_gaussians,
    gaussian_fit, knn_radii, mmd2, mmd2_with, EmbeddingSet, Kernel, SetLabel, FRECHET_EPS,
};
pub use embedder::{normalize, Embedder, EMBED_DIM};
pub use report::{evaluate, EvalInputs, MetricReport, MetricValue, BATCHES, DC_NEIGHBOURS, DEFAULT_BATCH_SIZE};
