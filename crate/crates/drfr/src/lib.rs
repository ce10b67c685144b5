//! Dual-reference face retrieval across age: query a gallery with *two*
//! reference images — one fixing who to look for, one fixing how old they
//! should be — and rank by a sum of two learned Mahalanobis distances in a
//! shared linear embedding.
//!
//! The pieces, in dependency order:
//!
//! - [`model`]: datasets, the linear embedding `f(x) = Wx`, metric factors
//!   `Φ(a, b) = ‖L(f(a) − f(b))‖²`, quartet enumeration, hyperparameters.
//! - [`graph`]: per-age and per-identity heat-kernel similarity graphs and
//!   the locality penalty that keeps the embedding structure-preserving.
//! - [`loss`]: the quartet loss (two hinges, two equalizers), the full
//!   objective, and its analytic gradients.
//! - [`trainer`]: SGD with momentum over mined quartets, PSD projection,
//!   PCA initialization.
//! - [`retrieval`]: dual-reference scoring, top-K ranking, the hierarchical
//!   two-stage baseline, and top-K/CMC evaluation.
//! - [`io`]: dataset/checkpoint files, CSV, synthetic data.
//!
//! Training and evaluation are deterministic for a fixed seed: with the
//! default `parallel` feature, work is distributed but reduced in a fixed
//! order, so results are bit-identical to the sequential build.

pub mod error;
mod exec;
pub mod graph;
pub mod io;
pub mod loss;
pub mod model;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{build_all_graphs, locality_penalty, SimilarityGraph};
pub use io::{
    generate_synthetic, load_binary, load_checkpoint, load_csv, load_queries, save_binary,
    save_checkpoint, save_csv, ModelCheckpoint, SyntheticSpec,
};
pub use loss::{mahalanobis, quartet_loss, total_objective};
pub use model::{
    enumerate_quartets, Dataset, DualMetric, EmbeddingKind, EmbeddingModel, Hyperparams,
    MetricFactor, QuartetIndex, Sample, TrainedModel,
};
pub use retrieval::{dual_score, evaluate, hierarchical_retrieve, retrieve, EvalResult, Query, RankedList};
pub use trainer::{fit, mine_quartets, pca_fit, psd_project, Init, MetricUpdate, TrainConfig, TrainReport};
