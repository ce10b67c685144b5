//! Mini-batch SGD over (W, L_age, L_ind) with online quartet mining and PSD
//! maintenance, plus PCA fitting for the alternative embedding backend.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::{build_all_graphs, SimilarityGraph};
use crate::loss::{metric_gradients_direct, objective_gradient_bundle, total_objective, PairTable};
use crate::model::{
    enumerate_quartets, validate_dataset, Dataset, DualMetric, EmbeddingKind, EmbeddingModel,
    Hyperparams, QuartetIndex, TrainedModel,
};

/// Parameter initialization: fresh random W with identity metrics, or a
/// previously trained model to continue from.
#[derive(Debug, Clone)]
pub enum Init {
    Random,
    Resume(TrainedModel),
}

/// How the metrics are kept PSD. `Factorized` updates L directly, so
/// M = LᵀL is PSD by construction. `DirectM` updates M itself and projects
/// back onto the PSD cone by eigenvalue clamping after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricUpdate {
    Factorized,
    DirectM,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    pub init: Init,
    /// Emit an `epoch=… objective=… mined=…` line every this many epochs.
    pub log_every: usize,
    pub metric_update: MetricUpdate,
    /// Keep W fixed and train only the metrics (used with PCA embeddings).
    pub freeze_embedding: bool,
    /// Record the minimum eigenvalue of both LᵀL after every step.
    pub track_psd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: Hyperparams::default(),
            init: Init::Random,
            log_every: 1,
            metric_update: MetricUpdate::Factorized,
            freeze_embedding: false,
            track_psd: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full objective before the first step.
    pub initial_objective: f64,
    /// Full objective after each epoch (all quartets, full graphs).
    pub epoch_objectives: Vec<f64>,
    /// Mined quartet count for every batch, grouped by epoch.
    pub mined_per_batch: Vec<Vec<usize>>,
    pub model: TrainedModel,
    pub wall_seconds: f64,
    /// Min eigenvalue of (L_ageᵀL_age, L_indᵀL_ind) after each step, when
    /// `track_psd` was set.
    pub psd_min_eigs: Vec<[f64; 2]>,
}

/// Enumerates the quartets realizable inside `batch` and keeps those whose
/// margin statistic g(q) = (Φ_a(mn) − Φ_a(mm)) + (Φ_i(mn) − Φ_i(in)) falls
/// strictly below the batch mean of g. Order follows [`enumerate_quartets`].
///
/// `_delta` is part of the mining interface but the statistic is
/// margin-relative, so the threshold itself never enters.
pub fn mine_quartets(
    batch: &[usize],
    dataset: &Dataset,
    embedding: &EmbeddingModel,
    metric: &DualMetric,
    _delta: f64,
) -> Result<Vec<QuartetIndex>> {
    if let Some(&bad) = batch.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid("batch", format!("index {bad} out of range")));
    }
    let mut members: Vec<usize> = batch.to_vec();
    members.sort_unstable();
    members.dedup();

    // Cell grouping restricted to the batch, members in dataset order.
    let mut cells: std::collections::BTreeMap<(u32, u16), Vec<usize>> = std::collections::BTreeMap::new();
    let mut ids: BTreeSet<u32> = BTreeSet::new();
    let mut ages: BTreeSet<u16> = BTreeSet::new();
    for &i in &members {
        let s = dataset.sample(i);
        cells.entry((s.identity, s.age)).or_default().push(i);
        ids.insert(s.identity);
        ages.insert(s.age);
    }
    let ids: Vec<u32> = ids.into_iter().collect();
    let ages: Vec<u16> = ages.into_iter().collect();

    let mut quartets = Vec::new();
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
                                    quartets.push(QuartetIndex { i_m, i_n, j_m, j_n });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if quartets.is_empty() {
        return Ok(quartets);
    }

    let embeds = crate::loss::embed_dataset(embedding, dataset)?;
    let table = PairTable::build(&quartets, &embeds, metric);
    let margins: Vec<f64> = quartets.iter().map(|q| table.quartet_phis(q).margin()).collect();
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    Ok(quartets
        .into_iter()
        .zip(margins)
        .filter(|&(_, g)| g < mean)
        .map(|(q, _)| q)
        .collect())
}

/// Eigendecomposition of the symmetrized input with negatives clamped to 0.
/// Returns (clamped eigenvalues, eigenvector matrix V, columns aligned).
fn eigen_clamped(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    (vals, eig.eigenvectors)
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(
            "matrix",
            format!("psd_project needs a square matrix, got {}×{}", m.nrows(), m.ncols()),
        ));
    }
    for r in 0..m.nrows() {
        for c in (r + 1)..m.ncols() {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-9 {
                return Err(Error::invalid(
                    "matrix",
                    format!("psd_project needs a symmetric matrix; entry ({r},{c}) deviates"),
                ));
            }
        }
    }
    Ok(())
}

/// Nearest PSD matrix in Frobenius norm: clamp every negative eigenvalue of
/// the (symmetrized) input to zero and reconstruct. Idempotent on PSD inputs.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    let (vals, v) = eigen_clamped(m);
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals));
    let p = &v * lam * v.transpose();
    // Roundoff in the reconstruction can leave asymmetry at 1e-16; kill it.
    Ok((&p + p.transpose()).scale(0.5))
}

/// Top principal directions of the mean-centered features. Rows are
/// orthonormal; each row's first non-negligible entry is non-negative. When
/// the data rank is below `out_dim` the row count is reduced with a warning
/// on standard error.
pub fn pca_fit(dataset: &Dataset, out_dim: usize) -> Result<EmbeddingModel> {
    let n = dataset.len();
    let d = dataset.dim();
    if n < 2 {
        return Err(Error::EmptyInput("pca_fit needs at least 2 samples"));
    }
    if out_dim == 0 || out_dim > d.min(n) {
        return Err(Error::invalid(
            "out_dim",
            format!("must be in 1..={}, got {out_dim}", d.min(n)),
        ));
    }

    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(dataset.features(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let x = dataset.features(i);
        let centered = nalgebra::DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
        cov.ger(1.0 / (n as f64 - 1.0), &centered, &centered, 1.0);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let max_eig = eig.eigenvalues[order[0]];
    if !(max_eig > 0.0) {
        return Err(Error::invalid("out_dim", "data has zero variance; no principal directions"));
    }
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > 1e-9 * max_eig)
        .count();
    let rows = if out_dim > rank {
        eprintln!("warning: pca requested {out_dim} components but data rank is {rank}; reducing");
        rank
    } else {
        out_dim
    };

    let mut w = DMatrix::zeros(rows, d);
    for (r, &i) in order.iter().take(rows).enumerate() {
        let col = eig.eigenvectors.column(i);
        let max_abs = col.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let lead = col.iter().find(|v| v.abs() > 1e-9 * max_abs).copied().unwrap_or(0.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for c in 0..d {
            w[(r, c)] = sign * col[c];
        }
    }
    EmbeddingModel::new(EmbeddingKind::Pca, w)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()).scale(0.5);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Cap on the Frobenius norm of each per-matrix batch gradient. Quartet
/// coefficients scale with squared distances, so early batches on spread-out
/// data produce steps orders of magnitude above what the default learning
/// rate expects; clipping bounds the step without touching its direction.
const GRAD_CLIP: f64 = 2.0;

fn clip_to_norm(g: DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let norm = g.norm();
    if norm > cap {
        g.scale(cap / norm)
    } else {
        g
    }
}

/// Trains (W, L_age, L_ind) by mini-batch SGD with momentum. Each batch:
/// mine quartets, take the gradient of their loss plus the batch-restricted
/// locality terms (normalized by the mined count), step, then maintain PSD.
/// The reported per-epoch objective is measured over all quartets and the
/// full graphs so curves are comparable across epochs.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    let hyper = &config.hyper;
    hyper.validate()?;
    if hyper.batch_size < 4 {
        return Err(Error::invalid("batch_size", "must be at least 4 to admit a quartet"));
    }
    if config.log_every == 0 {
        return Err(Error::invalid("log_every", "must be positive"));
    }
    let violations = validate_dataset(dataset);
    if let Some(first) = violations.first() {
        return Err(Error::invalid(
            "dataset",
            format!("{} violation(s), first: {first}", violations.len()),
        ));
    }
    let quartets = enumerate_quartets(dataset);
    if quartets.is_empty() {
        return Err(Error::NoQuartets);
    }

    let start = Instant::now();
    let graphs = build_all_graphs(dataset, hyper)?;
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);

    let (mut embedding, mut metric) = match &config.init {
        Init::Random => {
            let d = hyper.embed_dim.min(dataset.dim());
            let bound = 1.0 / (dataset.dim() as f64).sqrt();
            let mut w = DMatrix::zeros(d, dataset.dim());
            for r in 0..d {
                for c in 0..dataset.dim() {
                    w[(r, c)] = rng.gen_range(-bound..bound);
                }
            }
            (
                EmbeddingModel::new(EmbeddingKind::Linear, w)?,
                DualMetric::identity(d),
            )
        }
        Init::Resume(model) => {
            if model.embedding.in_dim() != dataset.dim() {
                return Err(Error::DimensionMismatch {
                    context: "resume embedding",
                    expected: dataset.dim(),
                    got: model.embedding.in_dim(),
                });
            }
            (model.embedding.clone(), model.metric.clone())
        }
    };
    let d = embedding.out_dim();

    let mut v_w = DMatrix::zeros(d, embedding.in_dim());
    let mut v_l_age = DMatrix::zeros(metric.age.factor().nrows(), metric.age.factor().ncols());
    let mut v_l_ind = DMatrix::zeros(metric.ind.factor().nrows(), metric.ind.factor().ncols());
    // Direct-M state: the metric matrices themselves, kept in lockstep with
    // the factors used for distance evaluation.
    let (mut m_age, mut m_ind, mut v_m_age, mut v_m_ind) = match config.metric_update {
        MetricUpdate::DirectM => (
            metric.age.induced(),
            metric.ind.induced(),
            DMatrix::zeros(d, d),
            DMatrix::zeros(d, d),
        ),
        MetricUpdate::Factorized => (
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
        ),
    };

    let initial_objective = total_objective(dataset, &quartets, &embedding, &metric, &graphs, hyper)?;
    if !initial_objective.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }

    let mu = hyper.momentum;
    let lr = hyper.learning_rate;
    let mut epoch_objectives = Vec::with_capacity(hyper.epochs);
    let mut mined_per_batch = Vec::with_capacity(hyper.epochs);
    let mut psd_min_eigs = Vec::new();

    for epoch in 1..=hyper.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut mined_counts = Vec::new();

        for batch in order.chunks(hyper.batch_size) {
            let mined = mine_quartets(batch, dataset, &embedding, &metric, hyper.margin_delta)?;
            let batch_graphs: Vec<SimilarityGraph> =
                graphs.iter().map(|g| g.restrict_to(batch)).collect();
            let bundle =
                objective_gradient_bundle(dataset, &mined, &embedding, &metric, &batch_graphs, hyper)?;
            // One shared normalizer keeps the step an exact (rescaled)
            // gradient of the batch objective.
            let scale = 1.0 / mined.len().max(1) as f64;
            if lr != 0.0 {
                v_w = v_w.scale(mu) + clip_to_norm(bundle.set.d_weights.scale(scale), GRAD_CLIP);
                if !config.freeze_embedding {
                    let stepped = embedding.weights() - v_w.scale(lr);
                    embedding.replace_weights(stepped);
                }
                match config.metric_update {
                    MetricUpdate::Factorized => {
                        v_l_age = v_l_age.scale(mu) + clip_to_norm(bundle.set.d_l_age.scale(scale), GRAD_CLIP);
                        v_l_ind = v_l_ind.scale(mu) + clip_to_norm(bundle.set.d_l_ind.scale(scale), GRAD_CLIP);
                        let stepped_age = metric.age.factor() - v_l_age.scale(lr);
                        let stepped_ind = metric.ind.factor() - v_l_ind.scale(lr);
                        metric.age.replace(stepped_age);
                        metric.ind.replace(stepped_ind);
                    }
                    MetricUpdate::DirectM => {
                        let (dm_age, dm_ind) = metric_gradients_direct(&bundle.coeffs, &bundle.embeds, d);
                        v_m_age = v_m_age.scale(mu) + clip_to_norm(dm_age.scale(scale), GRAD_CLIP);
                        v_m_ind = v_m_ind.scale(mu) + clip_to_norm(dm_ind.scale(scale), GRAD_CLIP);
                        m_age -= v_m_age.scale(lr);
                        m_ind -= v_m_ind.scale(lr);
                        let (vals_a, vecs_a) = eigen_clamped(&m_age);
                        let (vals_i, vecs_i) = eigen_clamped(&m_ind);
                        m_age = reconstruct_psd(&vals_a, &vecs_a);
                        m_ind = reconstruct_psd(&vals_i, &vecs_i);
                        metric.age.replace(factor_of(&vals_a, &vecs_a));
                        metric.ind.replace(factor_of(&vals_i, &vecs_i));
                    }
                }
            }

            if !(all_finite(embedding.weights())
                && all_finite(metric.age.factor())
                && all_finite(metric.ind.factor()))
            {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if config.track_psd {
                psd_min_eigs.push([
                    min_eigenvalue(&metric.age.induced()),
                    min_eigenvalue(&metric.ind.induced()),
                ]);
            }
            mined_counts.push(mined.len());
        }

        let objective = total_objective(dataset, &quartets, &embedding, &metric, &graphs, hyper)?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let mined_total: usize = mined_counts.iter().sum();
        if epoch % config.log_every == 0 || epoch == hyper.epochs {
            eprintln!("epoch={epoch} objective={objective} mined={mined_total}");
        }
        epoch_objectives.push(objective);
        mined_per_batch.push(mined_counts);
    }

    Ok(TrainReport {
        initial_objective,
        epoch_objectives,
        mined_per_batch,
        model: TrainedModel::new(embedding, metric)?,
        wall_seconds: start.elapsed().as_secs_f64(),
        psd_min_eigs,
    })
}

fn reconstruct_psd(vals: &[f64], vecs: &DMatrix<f64>) -> DMatrix<f64> {
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals.to_vec()));
    let p = vecs * lam * vecs.transpose();
    (&p + p.transpose()).scale(0.5)
}

fn factor_of(vals: &[f64], vecs: &DMatrix<f64>) -> DMatrix<f64> {
    let sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
        vals.iter().map(|&l| l.sqrt()).collect(),
    ));
    sqrt * vecs.transpose()
}
