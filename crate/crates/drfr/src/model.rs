//! Domain types shared by every module: samples, datasets, embeddings,
//! metric factors, quartets, and hyperparameters.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One item: a feature vector with an identity label and an age label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub identity: u32,
    pub age: u16,
    pub features: Vec<f64>,
}

impl Sample {
    pub fn new(id: impl Into<String>, identity: u32, age: u16, features: Vec<f64>) -> Self {
        Sample {
            id: id.into(),
            identity,
            age,
            features,
        }
    }
}

/// An ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    /// Wraps samples with a declared dimension. Use [`validate_dataset`] to
    /// check the invariants; construction itself does not reject.
    pub fn new(samples: Vec<Sample>, dim: usize) -> Self {
        Dataset { samples, dim }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.samples[index].features
    }

    /// Dataset index of the sample with the given id, scanning in order.
    pub fn index_of_id(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Distinct identity labels, ascending.
    pub fn identities(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.samples.iter().map(|s| s.identity).collect();
        set.into_iter().collect()
    }

    /// Distinct age labels, ascending.
    pub fn ages(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self.samples.iter().map(|s| s.age).collect();
        set.into_iter().collect()
    }

    /// Sample indices grouped by (identity, age) cell, each group in dataset
    /// order. Keys iterate in (identity, age) ascending order.
    pub(crate) fn cell_index(&self) -> BTreeMap<(u32, u16), Vec<usize>> {
        let mut cells: BTreeMap<(u32, u16), Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            cells.entry((s.identity, s.age)).or_default().push(i);
        }
        cells
    }
}

/// A broken dataset invariant, tied to the offending sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sample_id: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sample {:?}: {}", self.sample_id, self.rule)
    }
}

/// Checks every sample against the dataset invariants and returns the
/// violations found; empty means the dataset is valid.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        if s.features.len() != dataset.dim() {
            violations.push(Violation {
                sample_id: s.id.clone(),
                rule: format!(
                    "feature length {} differs from dataset dimension {}",
                    s.features.len(),
                    dataset.dim()
                ),
            });
        }
        if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
            violations.push(Violation {
                sample_id: s.id.clone(),
                rule: format!("feature {} is not finite", j),
            });
        }
        match seen.get(s.id.as_str()) {
            Some(&first) => violations.push(Violation {
                sample_id: s.id.clone(),
                rule: format!("duplicate id (first seen at index {})", first),
            }),
            None => {
                seen.insert(s.id.as_str(), i);
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Linear,
    Pca,
}

/// The map f(x) = Wx from feature space into the joint embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: EmbeddingKind,
    weights: DMatrix<f64>,
}

impl EmbeddingModel {
    /// Rejects empty or non-finite weight matrices.
    pub fn new(kind: EmbeddingKind, weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::invalid("weights", "embedding matrix must be non-empty"));
        }
        if !weights.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("weights", "embedding matrix has non-finite entries"));
        }
        Ok(EmbeddingModel { kind, weights })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Embedding dimension d (rows of W).
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Feature dimension D (columns of W).
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// f(x) = Wx.
    pub fn embed(&self, features: &[f64]) -> Result<DVector<f64>> {
        if features.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "embed",
                expected: self.in_dim(),
                got: features.len(),
            });
        }
        let x = DVector::from_column_slice(features);
        Ok(&self.weights * x)
    }

    pub(crate) fn replace_weights(&mut self, weights: DMatrix<f64>) {
        self.weights = weights;
    }
}

/// Factor L of a Mahalanobis matrix M = LᵀL; M is PSD by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFactor {
    factor: DMatrix<f64>,
}

impl MetricFactor {
    pub fn new(factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() == 0 || factor.ncols() == 0 {
            return Err(Error::invalid("factor", "metric factor must be non-empty"));
        }
        if !factor.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("factor", "metric factor has non-finite entries"));
        }
        Ok(MetricFactor { factor })
    }

    /// Identity factor of size d — the conventional starting metric.
    pub fn identity(d: usize) -> Self {
        MetricFactor {
            factor: DMatrix::identity(d, d),
        }
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Input dimension d (columns of L).
    pub fn dim(&self) -> usize {
        self.factor.ncols()
    }

    /// The induced PSD matrix M = LᵀL.
    pub fn induced(&self) -> DMatrix<f64> {
        self.factor.transpose() * &self.factor
    }

    pub(crate) fn replace(&mut self, factor: DMatrix<f64>) {
        self.factor = factor;
    }
}

/// The two learned metrics: one for age similarity, one for individual
/// similarity. Both act on the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMetric {
    pub age: MetricFactor,
    pub ind: MetricFactor,
}

impl DualMetric {
    pub fn new(age: MetricFactor, ind: MetricFactor) -> Result<Self> {
        if age.dim() != ind.dim() {
            return Err(Error::DimensionMismatch {
                context: "dual metric",
                expected: age.dim(),
                got: ind.dim(),
            });
        }
        Ok(DualMetric { age, ind })
    }

    /// Both metrics start as identity matrices.
    pub fn identity(d: usize) -> Self {
        DualMetric {
            age: MetricFactor::identity(d),
            ind: MetricFactor::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.age.dim()
    }
}

/// A trained embedding plus its dual metric — the unit that checkpoints,
/// retrieval, and evaluation all consume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub embedding: EmbeddingModel,
    pub metric: DualMetric,
}

impl TrainedModel {
    pub fn new(embedding: EmbeddingModel, metric: DualMetric) -> Result<Self> {
        if embedding.out_dim() != metric.dim() {
            return Err(Error::DimensionMismatch {
                context: "model",
                expected: embedding.out_dim(),
                got: metric.dim(),
            });
        }
        Ok(TrainedModel { embedding, metric })
    }
}

/// Four dataset indices realizing identities (i, j) at ages (m, n):
/// i_m and i_n share identity i, j_m and j_n share identity j ≠ i,
/// i_m and j_m share age m, i_n and j_n share age n ≠ m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuartetIndex {
    pub i_m: usize,
    pub i_n: usize,
    pub j_m: usize,
    pub j_n: usize,
}

impl QuartetIndex {
    pub fn indices(&self) -> [usize; 4] {
        [self.i_m, self.i_n, self.j_m, self.j_n]
    }

    /// True when the four samples satisfy the label structure above.
    pub fn is_valid(&self, dataset: &Dataset) -> bool {
        let n = dataset.len();
        if self.indices().iter().any(|&i| i >= n) {
            return false;
        }
        let im = dataset.sample(self.i_m);
        let i_n = dataset.sample(self.i_n);
        let jm = dataset.sample(self.j_m);
        let jn = dataset.sample(self.j_n);
        im.identity == i_n.identity
            && jm.identity == jn.identity
            && im.identity != jm.identity
            && im.age == jm.age
            && i_n.age == jn.age
            && im.age != i_n.age
    }
}

/// Lists every quartet in the dataset: all pairs of identities i < j crossed
/// with all pairs of ages m < n whose four (identity, age) cells are
/// non-empty, expanded over every sample combination within those cells.
///
/// Order is lexicographic by (identity_i, identity_j, age_m, age_n), then by
/// dataset position within each cell (i_m, i_n, j_m, j_n nesting).
pub fn enumerate_quartets(dataset: &Dataset) -> Vec<QuartetIndex> {
    let cells = dataset.cell_index();
    let ids = dataset.identities();
    let ages = dataset.ages();
    let mut out = Vec::new();
    for (a, &id_i) in ids.iter().enumerate() {
        for &id_j in &ids[a + 1..] {
            for (b, &age_m) in ages.iter().enumerate() {
                for &age_n in &ages[b + 1..] {
                    let (Some(c_im), Some(c_in), Some(c_jm), Some(c_jn)) = (
                        cells.get(&(id_i, age_m)),
                        cells.get(&(id_i, age_n)),
                        cells.get(&(id_j, age_m)),
                        cells.get(&(id_j, age_n)),
                    ) else {
                        continue;
                    };
                    for &i_m in c_im {
                        for &i_n in c_in {
                            for &j_m in c_jm {
                                for &j_n in c_jn {
                                    out.push(QuartetIndex { i_m, i_n, j_m, j_n });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Heat-kernel bandwidth: a fixed positive t, or the median-distance rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub(crate) fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(t) = self {
            if !(t.is_finite() && *t > 0.0) {
                return Err(Error::invalid("bandwidth", format!("t must be positive and finite, got {t}")));
            }
        }
        Ok(())
    }
}

/// Every tunable knob of graph construction, training, and retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Neighborhood size for the per-age kNN graphs.
    pub k_neighbors: usize,
    /// Heat-kernel bandwidth t.
    pub bandwidth: Bandwidth,
    /// Age-gap threshold ε for per-identity graphs (strict |m−n| < ε).
    pub age_epsilon: u16,
    /// Hinge margin δ.
    pub margin_delta: f64,
    /// Weight λ on the locality regularizers in the objective.
    pub graph_weight: f64,
    /// Weight on the age term of the dual retrieval score.
    pub retrieve_lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Requested embedding dimension d; clamped to the feature dimension.
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k_neighbors: 5,
            bandwidth: Bandwidth::Auto,
            age_epsilon: 5,
            margin_delta: 1.0,
            graph_weight: 1.0,
            retrieve_lambda: 1.0,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            embed_dim: 128,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors", "must be positive"));
        }
        self.bandwidth.validate()?;
        if self.age_epsilon == 0 {
            return Err(Error::invalid("age_epsilon", "must be positive"));
        }
        if !(self.margin_delta.is_finite() && self.margin_delta > 0.0) {
            return Err(Error::invalid(
                "margin_delta",
                format!("must be positive and finite, got {}", self.margin_delta),
            ));
        }
        // learning_rate 0 is legal: it makes fit a no-op, which is useful for
        // smoke checks.
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("graph_weight", self.graph_weight),
            ("retrieve_lambda", self.retrieve_lambda),
            ("momentum", self.momentum),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be non-negative and finite, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(Error::invalid("embed_dim", "must be positive"));
        }
        Ok(())
    }
}
