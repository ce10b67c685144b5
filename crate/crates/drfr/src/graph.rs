//! Locality graphs: per-age kNN graphs over individuals and per-identity
//! age-window graphs, both weighted by the heat kernel exp(−‖x−x′‖²/t).

use std::io::Write;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{Bandwidth, Dataset, EmbeddingModel, Hyperparams};

/// Which family a graph belongs to and the label it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    PerAge(u16),
    PerIdentity(u32),
}

/// One undirected edge between two dataset indices, stored with a < b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Sparse symmetric similarity matrix over a label-restricted node set.
/// Storing each unordered pair once makes symmetry structural and keeps the
/// diagonal empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    kind: GraphKind,
    node_indices: Vec<usize>,
    edges: Vec<Edge>,
    bandwidth: f64,
}

impl SimilarityGraph {
    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    /// Dataset indices of the nodes, ascending.
    pub fn node_indices(&self) -> &[usize] {
        &self.node_indices
    }

    /// Edges sorted by (a, b); each unordered pair appears exactly once.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The bandwidth t actually used (resolved when Auto was requested).
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Weight between two dataset indices; 0 for non-edges and the diagonal.
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let key = (a.min(b), a.max(b));
        match self.edges.binary_search_by(|e| (e.a, e.b).cmp(&key)) {
            Ok(i) => self.edges[i].weight,
            Err(_) => 0.0,
        }
    }

    /// Writes `src_id dst_id weight` lines, weights with 9 significant digits.
    pub fn write_edge_list<W: Write>(&self, dataset: &Dataset, out: &mut W) -> Result<()> {
        for e in &self.edges {
            writeln!(
                out,
                "{} {} {:.8e}",
                dataset.sample(e.a).id,
                dataset.sample(e.b).id,
                e.weight
            )?;
        }
        Ok(())
    }

    /// The sub-graph induced by a set of dataset indices: edges with both
    /// endpoints inside. Used for batch-restricted locality terms.
    pub fn restrict_to(&self, indices: &[usize]) -> SimilarityGraph {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let inside = |i: usize| sorted.binary_search(&i).is_ok();
        SimilarityGraph {
            kind: self.kind,
            node_indices: self.node_indices.iter().copied().filter(|&i| inside(i)).collect(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| inside(e.a) && inside(e.b))
                .collect(),
            bandwidth: self.bandwidth,
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Median of squared Euclidean distances over the given index pairs; falls
/// back to 1.0 when the median is 0 so the kernel stays defined.
pub fn auto_bandwidth(dataset: &Dataset, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("auto_bandwidth needs at least one pair"));
    }
    let mut d2: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| squared_distance(dataset.features(a), dataset.features(b)))
        .collect();
    d2.sort_by(|x, y| x.total_cmp(y));
    let n = d2.len();
    let median = if n % 2 == 1 {
        d2[n / 2]
    } else {
        0.5 * (d2[n / 2 - 1] + d2[n / 2])
    };
    Ok(if median == 0.0 { 1.0 } else { median })
}

fn resolve_bandwidth(dataset: &Dataset, pairs: &[(usize, usize)], bandwidth: Bandwidth) -> Result<f64> {
    bandwidth.validate()?;
    match bandwidth {
        Bandwidth::Fixed(t) => Ok(t),
        // An edgeless graph never evaluates the kernel; any t works.
        Bandwidth::Auto if pairs.is_empty() => Ok(1.0),
        Bandwidth::Auto => auto_bandwidth(dataset, pairs),
    }
}

fn kernel_edges(dataset: &Dataset, mut pairs: Vec<(usize, usize)>, t: f64) -> Vec<Edge> {
    pairs.sort_unstable();
    pairs.dedup();
    let weights = exec::map_slice(&pairs, |&(a, b)| {
        (-squared_distance(dataset.features(a), dataset.features(b)) / t).exp()
    });
    pairs
        .into_iter()
        .zip(weights)
        .map(|((a, b), weight)| Edge { a, b, weight })
        .collect()
}

/// Builds Sⁿ: nodes are the samples at `age`; edges join union-symmetrized
/// k-nearest neighbors by squared Euclidean distance in feature space.
pub fn build_per_age_graph(dataset: &Dataset, age: u16, k: usize, bandwidth: Bandwidth) -> Result<SimilarityGraph> {
    if k == 0 {
        return Err(Error::invalid("k_neighbors", "must be positive"));
    }
    let nodes: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.sample(i).age == age)
        .collect();
    if nodes.is_empty() {
        return Err(Error::AgeNotPresent(age));
    }

    // Per-node neighbor search; distance ties break by dataset index so the
    // k-cut is deterministic.
    let neighbor_lists = exec::map_slice(&nodes, |&a| {
        let mut cand: Vec<(f64, usize)> = nodes
            .iter()
            .filter(|&&b| b != a)
            .map(|&b| (squared_distance(dataset.features(a), dataset.features(b)), b))
            .collect();
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        cand.truncate(k);
        cand.into_iter().map(move |(_, b)| (a.min(b), a.max(b))).collect::<Vec<_>>()
    });
    // Union-symmetrize before anything else: the realized edge set (each
    // unordered pair once) is what the auto bandwidth takes its median over.
    let mut pairs: Vec<(usize, usize)> = neighbor_lists.into_iter().flatten().collect();
    pairs.sort_unstable();
    pairs.dedup();

    let t = resolve_bandwidth(dataset, &pairs, bandwidth)?;
    Ok(SimilarityGraph {
        kind: GraphKind::PerAge(age),
        node_indices: nodes,
        edges: kernel_edges(dataset, pairs, t),
        bandwidth: t,
    })
}

/// Builds Sᵢ: nodes are the samples of `identity`; two samples at ages m, n
/// are joined iff |m − n| < ε (strict).
pub fn build_per_identity_graph(
    dataset: &Dataset,
    identity: u32,
    epsilon: u16,
    bandwidth: Bandwidth,
) -> Result<SimilarityGraph> {
    if epsilon == 0 {
        return Err(Error::invalid("age_epsilon", "must be positive"));
    }
    let nodes: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.sample(i).identity == identity)
        .collect();
    if nodes.is_empty() {
        return Err(Error::IdentityNotPresent(identity));
    }

    let mut pairs = Vec::new();
    for (u, &a) in nodes.iter().enumerate() {
        for &b in &nodes[u + 1..] {
            let (m, n) = (dataset.sample(a).age, dataset.sample(b).age);
            if m.abs_diff(n) < epsilon {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }

    let t = resolve_bandwidth(dataset, &pairs, bandwidth)?;
    Ok(SimilarityGraph {
        kind: GraphKind::PerIdentity(identity),
        node_indices: nodes,
        edges: kernel_edges(dataset, pairs, t),
        bandwidth: t,
    })
}

/// All locality graphs of a dataset: one per distinct age (ascending), then
/// one per distinct identity (ascending) — the regularizer set Sⁿ ∪ Sᵢ.
pub fn build_all_graphs(dataset: &Dataset, hyper: &Hyperparams) -> Result<Vec<SimilarityGraph>> {
    let mut graphs = Vec::new();
    for age in dataset.ages() {
        graphs.push(build_per_age_graph(dataset, age, hyper.k_neighbors, hyper.bandwidth)?);
    }
    for identity in dataset.identities() {
        graphs.push(build_per_identity_graph(dataset, identity, hyper.age_epsilon, hyper.bandwidth)?);
    }
    Ok(graphs)
}

/// Σ over edges of ‖f(x_a) − f(x_b)‖²₂ · w(a,b), each unordered edge once.
pub fn locality_penalty(graph: &SimilarityGraph, embedding: &EmbeddingModel, dataset: &Dataset) -> Result<f64> {
    if embedding.in_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "locality_penalty",
            expected: dataset.dim(),
            got: embedding.in_dim(),
        });
    }
    let terms = exec::map_slice(graph.edges(), |e| {
        let fa = embedding.embed(dataset.features(e.a)).expect("dims checked");
        let fb = embedding.embed(dataset.features(e.b)).expect("dims checked");
        (fa - fb).norm_squared() * e.weight
    });
    Ok(terms.iter().sum())
}
