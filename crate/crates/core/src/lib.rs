//! Biclustering by profile-likelihood maximization.
//!
//! The crate clusters the rows and columns of a data matrix at once by
//! maximizing `F(g, h) = sum_kl N_kl f(S_kl / N_kl)` over row labels `g` and
//! column labels `h`, where `f` is a convex rate function (Bernoulli,
//! Poisson or Gaussian). It also ships a block-model simulator, ground-truth
//! evaluation, consistency diagnostics and a Monte-Carlo harness.

pub mod cli;
pub mod criterion;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kmeans;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod simharness;

pub use criterion::{block_stats, criterion_value, move_delta, Axis, BlockStats, Rate};
pub use error::{Error, Result};
pub use evaluation::{confusion, misclassification, ConfusionPair, Misclassification};
pub use model::{generate, paper_spec, BlockModelSpec, DataMatrix, Design, Family, LabelAssignment, Sample};
pub use optimizer::{fit, fit_from_init, kl_sweep, FitConfig, FitResult};
