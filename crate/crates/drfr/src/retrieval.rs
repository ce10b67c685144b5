//! Dual-reference scoring, ranking, the hierarchical two-stage baseline, and
//! the evaluation harness (top-K accuracy, CMC).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exec;
use crate::loss::mahalanobis;
use crate::model::{Dataset, DualMetric, EmbeddingModel, Sample, TrainedModel};

/// A dual reference: one sample fixes the wanted identity, the other fixes
/// the wanted age.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub identity_ref: Sample,
    pub age_ref: Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub index: usize,
    pub score: f64,
}

/// Gallery indices ordered by ascending score, ties broken by ascending
/// index. Constructed only by the retrieval functions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Evaluation summary over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// K → fraction of queries whose target landed in the top K.
    pub top_k: BTreeMap<usize, f64>,
    /// cmc[r] = fraction of queries whose target rank is ≤ r + 1.
    pub cmc: Vec<f64>,
}

impl EvalResult {
    /// `k,accuracy` CSV block with 6-decimal fixed formatting.
    pub fn top_k_csv(&self) -> String {
        let mut out = String::from("k,accuracy\n");
        for (k, acc) in &self.top_k {
            let _ = writeln!(out, "{k},{acc:.6}");
        }
        out
    }

    /// `rank,cmc` CSV block with 6-decimal fixed formatting.
    pub fn cmc_csv(&self) -> String {
        let mut out = String::from("rank,cmc\n");
        for (r, v) in self.cmc.iter().enumerate() {
            let _ = writeln!(out, "{},{v:.6}", r + 1);
        }
        out
    }
}

fn embed_sample(embedding: &EmbeddingModel, sample: &Sample) -> Result<DVector<f64>> {
    embedding.embed(&sample.features)
}

/// Φ_ind(f(item), f(identity_ref)) + λ_age · Φ_age(f(item), f(age_ref)).
pub fn dual_score(
    item: &Sample,
    query: &Query,
    embedding: &EmbeddingModel,
    metric: &DualMetric,
    lambda_age: f64,
) -> Result<f64> {
    let fg = embed_sample(embedding, item)?;
    let fid = embed_sample(embedding, &query.identity_ref)?;
    let fage = embed_sample(embedding, &query.age_ref)?;
    Ok(mahalanobis(&metric.ind, &fg, &fid)? + lambda_age * mahalanobis(&metric.age, &fg, &fage)?)
}

/// Ascending argsort of (score, index); the shared ordering rule for every
/// ranking in this module.
fn sorted_by_score(scores: Vec<f64>) -> Vec<RankedEntry> {
    let mut entries: Vec<RankedEntry> = scores
        .into_iter()
        .enumerate()
        .map(|(index, score)| RankedEntry { index, score })
        .collect();
    entries.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
    entries
}

fn gallery_embeds(gallery: &Dataset, embedding: &EmbeddingModel) -> Result<Vec<DVector<f64>>> {
    crate::loss::embed_dataset(embedding, gallery)
}

fn dual_scores_from_embeds(
    embeds: &[DVector<f64>],
    fid: &DVector<f64>,
    fage: &DVector<f64>,
    metric: &DualMetric,
    lambda_age: f64,
) -> Vec<f64> {
    exec::map_slice(embeds, |fg| {
        mahalanobis(&metric.ind, fg, fid).expect("dims checked")
            + lambda_age * mahalanobis(&metric.age, fg, fage).expect("dims checked")
    })
}

fn check_query_dims(gallery: &Dataset, query: &Query) -> Result<()> {
    for (what, s) in [("identity_ref", &query.identity_ref), ("age_ref", &query.age_ref)] {
        if s.features.len() != gallery.dim() {
            return Err(Error::DimensionMismatch {
                context: if what == "identity_ref" { "identity_ref" } else { "age_ref" },
                expected: gallery.dim(),
                got: s.features.len(),
            });
        }
    }
    Ok(())
}

/// Top-K gallery items by ascending dual score.
pub fn retrieve(
    gallery: &Dataset,
    query: &Query,
    model: &TrainedModel,
    lambda_age: f64,
    k: usize,
) -> Result<RankedList> {
    if gallery.is_empty() {
        return Err(Error::EmptyInput("retrieve needs a non-empty gallery"));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::invalid(
            "k",
            format!("must be in 1..={}, got {k}", gallery.len()),
        ));
    }
    check_query_dims(gallery, query)?;
    let embeds = gallery_embeds(gallery, &model.embedding)?;
    let fid = embed_sample(&model.embedding, &query.identity_ref)?;
    let fage = embed_sample(&model.embedding, &query.age_ref)?;
    let scores = dual_scores_from_embeds(&embeds, &fid, &fage, &model.metric, lambda_age);
    let mut entries = sorted_by_score(scores);
    entries.truncate(k);
    Ok(RankedList { entries })
}

/// Two-stage baseline: rank by Φ_ind against the identity reference, keep the
/// top C candidates, re-rank those by Φ_age against the age reference, and
/// return the top K. Stage-2 ties break by the original gallery index.
pub fn hierarchical_retrieve(
    gallery: &Dataset,
    query: &Query,
    model: &TrainedModel,
    candidates: usize,
    k: usize,
) -> Result<RankedList> {
    if gallery.is_empty() {
        return Err(Error::EmptyInput("hierarchical_retrieve needs a non-empty gallery"));
    }
    if candidates == 0 || candidates > gallery.len() {
        return Err(Error::invalid(
            "candidates",
            format!("must be in 1..={}, got {candidates}", gallery.len()),
        ));
    }
    if k == 0 || k > candidates {
        return Err(Error::invalid("k", format!("must be in 1..={candidates}, got {k}")));
    }
    check_query_dims(gallery, query)?;
    let embeds = gallery_embeds(gallery, &model.embedding)?;
    let fid = embed_sample(&model.embedding, &query.identity_ref)?;
    let fage = embed_sample(&model.embedding, &query.age_ref)?;

    let ind_scores = exec::map_slice(&embeds, |fg| {
        mahalanobis(&model.metric.ind, fg, &fid).expect("dims checked")
    });
    let mut stage1 = sorted_by_score(ind_scores);
    stage1.truncate(candidates);

    let mut stage2: Vec<RankedEntry> = stage1
        .iter()
        .map(|e| RankedEntry {
            index: e.index,
            score: mahalanobis(&model.metric.age, &embeds[e.index], &fage).expect("dims checked"),
        })
        .collect();
    stage2.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
    stage2.truncate(k);
    Ok(RankedList { entries: stage2 })
}

/// CMC depth: gallery size capped at 50 ranks.
fn cmc_len(gallery_len: usize) -> usize {
    gallery_len.min(50)
}

/// Rank (1-based) of the best-placed gallery item matching the query's
/// (identity-of-identity_ref, age-of-age_ref); None when nothing matches.
fn target_rank(
    gallery: &Dataset,
    query: &Query,
    embeds: &[DVector<f64>],
    metric: &DualMetric,
    embedding: &EmbeddingModel,
    lambda_age: f64,
) -> Result<Option<usize>> {
    let fid = embed_sample(embedding, &query.identity_ref)?;
    let fage = embed_sample(embedding, &query.age_ref)?;
    let scores = dual_scores_from_embeds(embeds, &fid, &fage, metric, lambda_age);
    let order = sorted_by_score(scores);
    let want_identity = query.identity_ref.identity;
    let want_age = query.age_ref.age;
    Ok(order
        .iter()
        .position(|e| {
            let s = gallery.sample(e.index);
            s.identity == want_identity && s.age == want_age
        })
        .map(|p| p + 1))
}

/// Evaluates a query set: a query counts as solved at rank r when any gallery
/// item with the identity of its identity reference and the age of its age
/// reference appears at rank ≤ r. The explicit target index in each pair is
/// validated as the ground-truth witness.
pub fn evaluate(
    gallery: &Dataset,
    queries: &[(Query, usize)],
    model: &TrainedModel,
    lambda_age: f64,
    ks: &[usize],
) -> Result<EvalResult> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("evaluate needs at least one query"));
    }
    if gallery.is_empty() {
        return Err(Error::EmptyInput("evaluate needs a non-empty gallery"));
    }
    if queries.iter().any(|(_, t)| *t >= gallery.len()) {
        return Err(Error::invalid("target", "target index out of gallery range"));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::invalid("ks", "top-K values must be positive"));
    }
    for (q, _) in queries {
        check_query_dims(gallery, q)?;
    }

    let embeds = gallery_embeds(gallery, &model.embedding)?;
    let ranks: Vec<Option<usize>> = {
        let results = exec::map_slice(queries, |(q, _)| {
            target_rank(gallery, q, &embeds, &model.metric, &model.embedding, lambda_age)
        });
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            out.push(r?);
        }
        out
    };

    let n = queries.len() as f64;
    let mut top_k = BTreeMap::new();
    for &k in ks {
        let hits = ranks.iter().filter(|r| matches!(r, Some(rank) if *rank <= k)).count();
        top_k.insert(k, hits as f64 / n);
    }
    let mut cmc = Vec::with_capacity(cmc_len(gallery.len()));
    for r in 1..=cmc_len(gallery.len()) {
        let hits = ranks.iter().filter(|x| matches!(x, Some(rank) if *rank <= r)).count();
        cmc.push(hits as f64 / n);
    }
    Ok(EvalResult { top_k, cmc })
}
