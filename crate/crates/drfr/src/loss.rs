//! Quartet loss, full objective, and analytic gradients.
//!
//! Every distance here is Φ(a, b) = ‖L(f_a − f_b)‖²₂ = dᵀ(LᵀL)d. A quartet
//! {x_i^m, x_i^n, x_j^m, x_j^n} touches only three distinct pairs, all
//! anchored at x_i^m: (i_m, j_n) crosses both labels, (i_m, j_m) shares the
//! age, (i_m, i_n) shares the identity. The loss demands the cross-label
//! distance exceed each shared-label distance by the margin δ under the
//! matching metric, and equal the other shared-label distance under the
//! opposite metric.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::SimilarityGraph;
use crate::model::{Dataset, DualMetric, EmbeddingModel, Hyperparams, MetricFactor, QuartetIndex};

/// The four terms of one quartet's loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuartetLossBreakdown {
    pub hinge_age: f64,
    pub hinge_ind: f64,
    pub eq_age: f64,
    pub eq_ind: f64,
    pub total: f64,
}

/// Gradients of the objective with respect to every parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_weights: DMatrix<f64>,
    pub d_l_age: DMatrix<f64>,
    pub d_l_ind: DMatrix<f64>,
}

/// Φ(fa, fb) = ‖L(fa − fb)‖²₂.
pub fn mahalanobis(metric: &MetricFactor, fa: &DVector<f64>, fb: &DVector<f64>) -> Result<f64> {
    if fa.len() != metric.dim() || fb.len() != metric.dim() {
        return Err(Error::DimensionMismatch {
            context: "mahalanobis",
            expected: metric.dim(),
            got: if fa.len() != metric.dim() { fa.len() } else { fb.len() },
        });
    }
    let d = fa - fb;
    Ok((metric.factor() * d).norm_squared())
}

/// H(y) = max(0, δ − y).
pub fn hinge(y: f64, delta: f64) -> f64 {
    (delta - y).max(0.0)
}

/// Six pairwise distances of a quartet, in a fixed evaluation order.
struct QuartetPhis {
    a_mn: f64,
    a_mm: f64,
    a_in: f64,
    i_mn: f64,
    i_mm: f64,
    i_in: f64,
}

impl QuartetPhis {
    fn breakdown(&self, delta: f64) -> QuartetLossBreakdown {
        let hinge_age = hinge(self.a_mn - self.a_mm, delta);
        let hinge_ind = hinge(self.i_mn - self.i_in, delta);
        let e_a = self.a_mn - self.a_in;
        let e_i = self.i_mn - self.i_mm;
        let eq_age = e_a * e_a;
        let eq_ind = e_i * e_i;
        QuartetLossBreakdown {
            hinge_age,
            hinge_ind,
            eq_age,
            eq_ind,
            total: hinge_age + hinge_ind + eq_age + eq_ind,
        }
    }
}

/// Loss of one quartet given its four already-embedded vectors.
pub fn quartet_loss(
    f_im: &DVector<f64>,
    f_in: &DVector<f64>,
    f_jm: &DVector<f64>,
    f_jn: &DVector<f64>,
    metric: &DualMetric,
    delta: f64,
) -> Result<QuartetLossBreakdown> {
    let phis = QuartetPhis {
        a_mn: mahalanobis(&metric.age, f_im, f_jn)?,
        a_mm: mahalanobis(&metric.age, f_im, f_jm)?,
        a_in: mahalanobis(&metric.age, f_im, f_in)?,
        i_mn: mahalanobis(&metric.ind, f_im, f_jn)?,
        i_mm: mahalanobis(&metric.ind, f_im, f_jm)?,
        i_in: mahalanobis(&metric.ind, f_im, f_in)?,
    };
    Ok(phis.breakdown(delta))
}

/// Embeds every sample once; index-aligned with the dataset.
pub(crate) fn embed_dataset(embedding: &EmbeddingModel, dataset: &Dataset) -> Result<Vec<DVector<f64>>> {
    if embedding.in_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "embed_dataset",
            expected: dataset.dim(),
            got: embedding.in_dim(),
        });
    }
    Ok(exec::map_range(dataset.len(), |i| {
        embedding
            .embed(dataset.features(i))
            .expect("dimension checked above")
    }))
}

fn norm_pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// The three distinct pairs of a quartet, anchor first: (mn, mm, in).
fn quartet_pair_keys(q: &QuartetIndex) -> [(usize, usize); 3] {
    [
        norm_pair(q.i_m, q.j_n),
        norm_pair(q.i_m, q.j_m),
        norm_pair(q.i_m, q.i_n),
    ]
}

/// Cache of both metrics' Φ over every pair touched by a quartet set.
/// Negating the difference vector leaves ‖L·d‖² bitwise unchanged, so the
/// (min, max) pair orientation is exact, not approximate.
pub(crate) struct PairTable {
    phi_age: Vec<f64>,
    phi_ind: Vec<f64>,
    index: HashMap<(usize, usize), usize>,
}

impl PairTable {
    pub(crate) fn build(
        quartets: &[QuartetIndex],
        embeds: &[DVector<f64>],
        metric: &DualMetric,
    ) -> PairTable {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(quartets.len() * 3);
        for q in quartets {
            pairs.extend_from_slice(&quartet_pair_keys(q));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let values = exec::map_slice(&pairs, |&(a, b)| {
            let d = &embeds[a] - &embeds[b];
            (
                (metric.age.factor() * &d).norm_squared(),
                (metric.ind.factor() * &d).norm_squared(),
            )
        });
        let mut phi_age = Vec::with_capacity(pairs.len());
        let mut phi_ind = Vec::with_capacity(pairs.len());
        for (a, i) in values {
            phi_age.push(a);
            phi_ind.push(i);
        }
        let index = pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        PairTable {
            phi_age,
            phi_ind,
            index,
        }
    }

    /// (Φ_age, Φ_ind) for a pair of dataset indices in either order.
    pub(crate) fn phi(&self, a: usize, b: usize) -> (f64, f64) {
        let i = self.index[&norm_pair(a, b)];
        (self.phi_age[i], self.phi_ind[i])
    }

    pub(crate) fn quartet_phis(&self, q: &QuartetIndex) -> QuartetLossBreakdownInput {
        let (a_mn, i_mn) = self.phi(q.i_m, q.j_n);
        let (a_mm, i_mm) = self.phi(q.i_m, q.j_m);
        let (a_in, i_in) = self.phi(q.i_m, q.i_n);
        QuartetLossBreakdownInput {
            a_mn,
            a_mm,
            a_in,
            i_mn,
            i_mm,
            i_in,
        }
    }
}

/// Public-free mirror of QuartetPhis for crate-internal callers.
pub(crate) struct QuartetLossBreakdownInput {
    pub a_mn: f64,
    pub a_mm: f64,
    pub a_in: f64,
    pub i_mn: f64,
    pub i_mm: f64,
    pub i_in: f64,
}

impl QuartetLossBreakdownInput {
    pub(crate) fn breakdown(&self, delta: f64) -> QuartetLossBreakdown {
        QuartetPhis {
            a_mn: self.a_mn,
            a_mm: self.a_mm,
            a_in: self.a_in,
            i_mn: self.i_mn,
            i_mm: self.i_mm,
            i_in: self.i_in,
        }
        .breakdown(delta)
    }

    /// The mining statistic: sum of the two hinge arguments.
    pub(crate) fn margin(&self) -> f64 {
        (self.a_mn - self.a_mm) + (self.i_mn - self.i_in)
    }
}

fn check_dims(dataset: &Dataset, embedding: &EmbeddingModel, metric: &DualMetric) -> Result<()> {
    if embedding.in_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "objective",
            expected: dataset.dim(),
            got: embedding.in_dim(),
        });
    }
    if metric.dim() != embedding.out_dim() {
        return Err(Error::DimensionMismatch {
            context: "objective metric",
            expected: embedding.out_dim(),
            got: metric.dim(),
        });
    }
    Ok(())
}

/// Locality penalty evaluated against pre-embedded vectors; term order and
/// arithmetic match [`crate::graph::locality_penalty`] exactly.
fn locality_from_embeds(graph: &SimilarityGraph, embeds: &[DVector<f64>]) -> f64 {
    let terms = exec::map_slice(graph.edges(), |e| {
        (&embeds[e.a] - &embeds[e.b]).norm_squared() * e.weight
    });
    terms.iter().sum()
}

/// J = Σ_q quartet_loss(q).total + λ_graph · Σ_graphs locality_penalty.
pub fn total_objective(
    dataset: &Dataset,
    quartets: &[QuartetIndex],
    embedding: &EmbeddingModel,
    metric: &DualMetric,
    graphs: &[SimilarityGraph],
    hyper: &Hyperparams,
) -> Result<f64> {
    check_dims(dataset, embedding, metric)?;
    let embeds = embed_dataset(embedding, dataset)?;
    let table = PairTable::build(quartets, &embeds, metric);
    let mut quartet_sum = 0.0;
    for q in quartets {
        quartet_sum += table.quartet_phis(q).breakdown(hyper.margin_delta).total;
    }
    let mut graph_sum = 0.0;
    for g in graphs {
        graph_sum += locality_from_embeds(g, &embeds);
    }
    Ok(quartet_sum + hyper.graph_weight * graph_sum)
}

/// Everything a trainer step needs: the gradient set plus the per-pair
/// coefficient map (for the direct-M update) and the embeddings.
pub(crate) struct GradientBundle {
    pub set: GradientSet,
    pub coeffs: BTreeMap<(usize, usize), (f64, f64)>,
    pub embeds: Vec<DVector<f64>>,
}

/// Accumulates ∂J/∂Φ per (pair, metric), walking quartets in order.
///
/// For each quartet with hinge argument y = Φ(mn) − Φ(shared): the hinge
/// contributes −1/+1 to the two pairs only when y < δ strictly (subgradient
/// 0 at the kink); the equality term (Φ(mn) − Φ(other))² contributes ±2e.
fn pair_coefficients(
    quartets: &[QuartetIndex],
    table: &PairTable,
    delta: f64,
) -> BTreeMap<(usize, usize), (f64, f64)> {
    let mut coeffs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    let add = |coeffs: &mut BTreeMap<(usize, usize), (f64, f64)>, key, age: f64, ind: f64| {
        let e = coeffs.entry(key).or_insert((0.0, 0.0));
        e.0 += age;
        e.1 += ind;
    };
    for q in quartets {
        let [p_mn, p_mm, p_in] = quartet_pair_keys(q);
        let phis = table.quartet_phis(q);
        if phis.a_mn - phis.a_mm < delta {
            add(&mut coeffs, p_mn, -1.0, 0.0);
            add(&mut coeffs, p_mm, 1.0, 0.0);
        }
        if phis.i_mn - phis.i_in < delta {
            add(&mut coeffs, p_mn, 0.0, -1.0);
            add(&mut coeffs, p_in, 0.0, 1.0);
        }
        let e_a = phis.a_mn - phis.a_in;
        add(&mut coeffs, p_mn, 2.0 * e_a, 0.0);
        add(&mut coeffs, p_in, -2.0 * e_a, 0.0);
        let e_i = phis.i_mn - phis.i_mm;
        add(&mut coeffs, p_mn, 0.0, 2.0 * e_i);
        add(&mut coeffs, p_mm, 0.0, -2.0 * e_i);
    }
    coeffs
}

fn feature_diff(dataset: &Dataset, a: usize, b: usize) -> DVector<f64> {
    let xa = dataset.features(a);
    let xb = dataset.features(b);
    DVector::from_iterator(xa.len(), xa.iter().zip(xb).map(|(x, y)| x - y))
}

pub(crate) fn objective_gradient_bundle(
    dataset: &Dataset,
    quartets: &[QuartetIndex],
    embedding: &EmbeddingModel,
    metric: &DualMetric,
    graphs: &[SimilarityGraph],
    hyper: &Hyperparams,
) -> Result<GradientBundle> {
    check_dims(dataset, embedding, metric)?;
    let embeds = embed_dataset(embedding, dataset)?;
    let table = PairTable::build(quartets, &embeds, metric);
    let coeffs = pair_coefficients(quartets, &table, hyper.margin_delta);

    let mut d_weights = DMatrix::zeros(embedding.out_dim(), embedding.in_dim());
    let mut d_l_age = DMatrix::zeros(metric.age.factor().nrows(), metric.age.factor().ncols());
    let mut d_l_ind = DMatrix::zeros(metric.ind.factor().nrows(), metric.ind.factor().ncols());

    // One rank-1 update per (pair, metric): ∂Φ/∂L = 2(Ld)dᵀ and
    // ∂Φ/∂W = 2(LᵀL)d(x_a − x_b)ᵀ, both even in d, so pair orientation is
    // immaterial. BTreeMap order keeps the accumulation deterministic.
    for (&(a, b), &(c_age, c_ind)) in &coeffs {
        let d = &embeds[a] - &embeds[b];
        let xd = feature_diff(dataset, a, b);
        if c_age != 0.0 {
            let ld = metric.age.factor() * &d;
            d_l_age.ger(2.0 * c_age, &ld, &d, 1.0);
            let md = metric.age.factor().transpose() * &ld;
            d_weights.ger(2.0 * c_age, &md, &xd, 1.0);
        }
        if c_ind != 0.0 {
            let ld = metric.ind.factor() * &d;
            d_l_ind.ger(2.0 * c_ind, &ld, &d, 1.0);
            let md = metric.ind.factor().transpose() * &ld;
            d_weights.ger(2.0 * c_ind, &md, &xd, 1.0);
        }
    }

    // Locality regularizers touch only W: λ Σ_e 2 w_e (f_a − f_b)(x_a − x_b)ᵀ.
    if hyper.graph_weight != 0.0 {
        for g in graphs {
            for e in g.edges() {
                let fd = &embeds[e.a] - &embeds[e.b];
                let xd = feature_diff(dataset, e.a, e.b);
                d_weights.ger(2.0 * hyper.graph_weight * e.weight, &fd, &xd, 1.0);
            }
        }
    }

    Ok(GradientBundle {
        set: GradientSet {
            d_weights,
            d_l_age,
            d_l_ind,
        },
        coeffs,
        embeds,
    })
}

/// Analytic gradients of [`total_objective`] with respect to W, L_age, L_ind.
pub fn objective_gradients(
    dataset: &Dataset,
    quartets: &[QuartetIndex],
    embedding: &EmbeddingModel,
    metric: &DualMetric,
    graphs: &[SimilarityGraph],
    hyper: &Hyperparams,
) -> Result<GradientSet> {
    Ok(objective_gradient_bundle(dataset, quartets, embedding, metric, graphs, hyper)?.set)
}

/// Gradients with respect to M directly (∂Φ/∂M = ddᵀ), for the direct-M
/// training mode. Returns (dM_age, dM_ind), each d×d.
pub(crate) fn metric_gradients_direct(
    coeffs: &BTreeMap<(usize, usize), (f64, f64)>,
    embeds: &[DVector<f64>],
    dim: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut dm_age = DMatrix::zeros(dim, dim);
    let mut dm_ind = DMatrix::zeros(dim, dim);
    for (&(a, b), &(c_age, c_ind)) in coeffs {
        let d = &embeds[a] - &embeds[b];
        if c_age != 0.0 {
            dm_age.ger(c_age, &d, &d, 1.0);
        }
        if c_ind != 0.0 {
            dm_ind.ger(c_ind, &d, &d, 1.0);
        }
    }
    (dm_age, dm_ind)
}
