//! Acceptance gate: ten numbered criteria, one `PASS`/`FAIL` line each.
//!
//! Run with output visible:
//!
//! ```text
//! cargo test -p drfr --test acceptance -- --nocapture
//! ```
//!
//! Criteria 7–10 share one end-to-end benchmark (generate → train → evaluate,
//! computed once per process); the rest are self-contained property checks
//! against independent oracles.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use drfr::loss::objective_gradients;
use drfr::model::{Bandwidth, Violation};
use drfr::trainer::{MetricUpdate, TrainConfig};
use drfr::{
    build_all_graphs, dual_score, enumerate_quartets, evaluate, fit, generate_synthetic,
    hierarchical_retrieve, mahalanobis, mine_quartets, psd_project, quartet_loss, retrieve,
    save_checkpoint, total_objective, Dataset, DualMetric, EmbeddingKind, EmbeddingModel,
    EvalResult, Hyperparams, MetricFactor, ModelCheckpoint, Query, Sample, SyntheticSpec,
    TrainedModel,
};

fn report(n: usize, label: &str, pass: bool, details: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {n} ({label}): {verdict} ({details})");
    assert!(pass, "acceptance {n} ({label}) failed: {details}");
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness against central finite differences.

struct GradPoint {
    dataset: Dataset,
    hyper: Hyperparams,
    weights: DMatrix<f64>,
    l_age: DMatrix<f64>,
    l_ind: DMatrix<f64>,
}

fn random_grad_point(seed: u64) -> GradPoint {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = 4;
    let embed = 3;
    let mut samples = Vec::new();
    for identity in 0..2u32 {
        for age in [20u16, 23] {
            for s in 0..2 {
                let features = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
                samples.push(Sample::new(
                    format!("p{identity}-{age}-{s}"),
                    identity,
                    age,
                    features,
                ));
            }
        }
    }
    let dataset = Dataset::new(samples, dim);
    let hyper = Hyperparams {
        k_neighbors: 1,
        bandwidth: Bandwidth::Fixed(2.0),
        age_epsilon: 4,
        margin_delta: 1.0,
        graph_weight: 0.8,
        ..Hyperparams::default()
    };
    GradPoint {
        dataset,
        hyper,
        weights: DMatrix::from_fn(embed, dim, |_, _| rng.gen_range(-0.8..0.8)),
        l_age: DMatrix::from_fn(embed, embed, |_, _| rng.gen_range(-0.7..0.7)),
        l_ind: DMatrix::from_fn(embed, embed, |_, _| rng.gen_range(-0.7..0.7)),
    }
}

fn models_of(p: &GradPoint) -> (EmbeddingModel, DualMetric) {
    (
        EmbeddingModel::new(EmbeddingKind::Linear, p.weights.clone()).unwrap(),
        DualMetric::new(
            MetricFactor::new(p.l_age.clone()).unwrap(),
            MetricFactor::new(p.l_ind.clone()).unwrap(),
        )
        .unwrap(),
    )
}

/// Any hinge argument within this distance of δ makes the objective locally
/// non-differentiable; such draws are skipped, not compared.
fn near_hinge_kink(p: &GradPoint, tol: f64) -> bool {
    let (embedding, metric) = models_of(p);
    let embeds: Vec<DVector<f64>> = p
        .dataset
        .samples()
        .iter()
        .map(|s| embedding.embed(&s.features).unwrap())
        .collect();
    for q in enumerate_quartets(&p.dataset) {
        let [i_m, i_n, j_m, j_n] = q.indices();
        let age_arg = mahalanobis(&metric.age, &embeds[i_m], &embeds[j_n]).unwrap()
            - mahalanobis(&metric.age, &embeds[i_m], &embeds[j_m]).unwrap();
        let ind_arg = mahalanobis(&metric.ind, &embeds[i_m], &embeds[j_n]).unwrap()
            - mahalanobis(&metric.ind, &embeds[i_m], &embeds[i_n]).unwrap();
        if (age_arg - p.hyper.margin_delta).abs() < tol || (ind_arg - p.hyper.margin_delta).abs() < tol {
            return true;
        }
    }
    false
}

fn objective_at(p: &GradPoint) -> f64 {
    let (embedding, metric) = models_of(p);
    let quartets = enumerate_quartets(&p.dataset);
    let graphs = build_all_graphs(&p.dataset, &p.hyper).unwrap();
    total_objective(&p.dataset, &quartets, &embedding, &metric, &graphs, &p.hyper).unwrap()
}

/// Max error between analytic and FD gradients: relative for components
/// where either side exceeds 1e-8 in magnitude, absolute below that.
fn max_gradient_error(p: &mut GradPoint, h: f64) -> f64 {
    let (embedding, metric) = models_of(p);
    let quartets = enumerate_quartets(&p.dataset);
    let graphs = build_all_graphs(&p.dataset, &p.hyper).unwrap();
    let analytic =
        objective_gradients(&p.dataset, &quartets, &embedding, &metric, &graphs, &p.hyper).unwrap();

    let mut worst = 0.0f64;
    for target in 0..3 {
        let (rows, cols) = match target {
            0 => (p.weights.nrows(), p.weights.ncols()),
            1 => (p.l_age.nrows(), p.l_age.ncols()),
            _ => (p.l_ind.nrows(), p.l_ind.ncols()),
        };
        for i in 0..rows {
            for j in 0..cols {
                let orig = match target {
                    0 => p.weights[(i, j)],
                    1 => p.l_age[(i, j)],
                    _ => p.l_ind[(i, j)],
                };
                set_entry(p, target, i, j, orig + h);
                let up = objective_at(p);
                set_entry(p, target, i, j, orig - h);
                let down = objective_at(p);
                set_entry(p, target, i, j, orig);
                let fd = (up - down) / (2.0 * h);
                let grad = match target {
                    0 => analytic.d_weights[(i, j)],
                    1 => analytic.d_l_age[(i, j)],
                    _ => analytic.d_l_ind[(i, j)],
                };
                let scale = grad.abs().max(fd.abs());
                let err = if scale < 1e-8 {
                    (grad - fd).abs()
                } else {
                    (grad - fd).abs() / scale
                };
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn set_entry(p: &mut GradPoint, target: usize, i: usize, j: usize, v: f64) {
    match target {
        0 => p.weights[(i, j)] = v,
        1 => p.l_age[(i, j)] = v,
        _ => p.l_ind[(i, j)] = v,
    }
}

#[test]
fn criterion_1_gradient_check() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut seed = 0;
    while accepted < 20 {
        let mut p = random_grad_point(seed);
        seed += 1;
        if near_hinge_kink(&p, 1e-3) {
            continue;
        }
        worst = worst.max(max_gradient_error(&mut p, 1e-5));
        accepted += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && elapsed < 10.0;
    report(
        1,
        "gradient check",
        pass,
        format!("max error {worst:.3e} over 20 points, {elapsed:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. Pseudometric properties of Φ.

#[test]
fn criterion_2_metric_properties() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let tol = 1e-9;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.gen_range(2..5);
        let l = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0));
        let metric = MetricFactor::new(l).unwrap();
        let a = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
        let b = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
        let c = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));

        let ab = mahalanobis(&metric, &a, &b).unwrap();
        let ba = mahalanobis(&metric, &b, &a).unwrap();
        let aa = mahalanobis(&metric, &a, &a).unwrap();
        let bc = mahalanobis(&metric, &b, &c).unwrap();
        let ac = mahalanobis(&metric, &a, &c).unwrap();

        worst = worst.max((ab - ba).abs());
        worst = worst.max(aa.abs());
        worst = worst.max((-ab).max(0.0)); // non-negativity violation amount
        worst = worst.max((ac.sqrt() - (ab.sqrt() + bc.sqrt())).max(0.0));
    }
    report(
        2,
        "metric properties",
        worst <= tol,
        format!("worst violation {worst:.3e} over 1000 draws"),
    );
}

// ---------------------------------------------------------------------------
// 3. PSD maintenance during training and psd_project properties.

fn toy_dataset() -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_identities: 3,
        ages: vec![20, 22, 24],
        per_cell: 2,
        dim: 6,
        separation: 3.0,
        age_step: 0.5,
        sigma: 0.4,
        seed: 5,
    })
    .unwrap()
}

fn toy_config(update: MetricUpdate) -> TrainConfig {
    TrainConfig {
        hyper: Hyperparams {
            epochs: 10,
            batch_size: 8,
            embed_dim: 4,
            age_epsilon: 3,
            ..Hyperparams::default()
        },
        metric_update: update,
        track_psd: true,
        log_every: 100,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_3_psd_suite() {
    let dataset = toy_dataset();
    let mut min_seen = f64::INFINITY;
    let mut steps = 0;
    for update in [MetricUpdate::Factorized, MetricUpdate::DirectM] {
        let run = fit(&dataset, &toy_config(update)).unwrap();
        steps += run.psd_min_eigs.len();
        for [a, i] in &run.psd_min_eigs {
            min_seen = min_seen.min(*a).min(*i);
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst_idem = 0.0f64;
    let mut worst_nearest = 0.0f64;
    let mut worst_psd = 0.0f64;
    for _ in 0..100 {
        let half = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-2.0..2.0));
        let sym = (&half + half.transpose()).scale(0.5);
        let p = psd_project(&sym).unwrap();
        let again = psd_project(&p).unwrap();
        worst_idem = worst_idem.max((&again - &p).abs().max());
        // Nearest-PSD in Frobenius norm: the distance equals the clipped
        // negative spectrum exactly.
        let eig = nalgebra::linalg::SymmetricEigen::new(sym.clone());
        let clipped: f64 = eig
            .eigenvalues
            .iter()
            .map(|&l| l.min(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_nearest = worst_nearest.max(((&sym - &p).norm() - clipped).abs());
        let p_eig = nalgebra::linalg::SymmetricEigen::new(p.clone());
        let min_eig = p_eig.eigenvalues.min();
        worst_psd = worst_psd.max((-min_eig).max(0.0));
    }

    let pass = steps > 0
        && min_seen >= -1e-9
        && worst_idem <= 1e-9
        && worst_nearest <= 1e-9
        && worst_psd <= 1e-9;
    report(
        3,
        "psd suite",
        pass,
        format!(
            "min train eig {min_seen:.3e} over {steps} steps; idempotence {worst_idem:.3e}, nearest {worst_nearest:.3e}, psd {worst_psd:.3e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Mining equals exhaustive brute force.

fn brute_force_mine(
    batch: &[usize],
    dataset: &Dataset,
    embedding: &EmbeddingModel,
    metric: &DualMetric,
) -> Vec<drfr::QuartetIndex> {
    let mut members: Vec<usize> = batch.to_vec();
    members.sort_unstable();
    members.dedup();
    // Re-enumerate through the library's own order contract on a sub-dataset,
    // then map back to original indices.
    let sub = Dataset::new(
        members.iter().map(|&i| dataset.sample(i).clone()).collect(),
        dataset.dim(),
    );
    let embeds: Vec<DVector<f64>> = members
        .iter()
        .map(|&i| embedding.embed(dataset.features(i)).unwrap())
        .collect();
    let quartets = enumerate_quartets(&sub);
    let margins: Vec<f64> = quartets
        .iter()
        .map(|q| {
            let [i_m, i_n, j_m, j_n] = q.indices();
            let a_mn = mahalanobis(&metric.age, &embeds[i_m], &embeds[j_n]).unwrap();
            let a_mm = mahalanobis(&metric.age, &embeds[i_m], &embeds[j_m]).unwrap();
            let i_mn = mahalanobis(&metric.ind, &embeds[i_m], &embeds[j_n]).unwrap();
            let i_in = mahalanobis(&metric.ind, &embeds[i_m], &embeds[i_n]).unwrap();
            (a_mn - a_mm) + (i_mn - i_in)
        })
        .collect();
    if quartets.len() < 2 {
        return Vec::new();
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    quartets
        .iter()
        .zip(&margins)
        .filter(|&(_, &g)| g < mean)
        .map(|(q, _)| {
            let [i_m, i_n, j_m, j_n] = q.indices();
            drfr::QuartetIndex {
                i_m: members[i_m],
                i_n: members[i_n],
                j_m: members[j_m],
                j_n: members[j_n],
            }
        })
        .collect()
}

#[test]
fn criterion_4_mining_oracle() {
    let dataset = generate_synthetic(&SyntheticSpec {
        n_identities: 4,
        ages: vec![20, 21, 22],
        per_cell: 2,
        dim: 5,
        separation: 2.0,
        age_step: 1.0,
        sigma: 0.6,
        seed: 13,
    })
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut checked = 0;
    for trial in 0..50 {
        let size = rng.gen_range(4..=16);
        let mut batch: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..batch.len()).rev() {
            let j = rng.gen_range(0..=i);
            batch.swap(i, j);
        }
        batch.truncate(size);

        let w = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        let embedding = EmbeddingModel::new(EmbeddingKind::Linear, w).unwrap();
        let metric = DualMetric::new(
            MetricFactor::new(DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap(),
            MetricFactor::new(DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap(),
        )
        .unwrap();

        let mined = mine_quartets(&batch, &dataset, &embedding, &metric, 1.0).unwrap();
        let oracle = brute_force_mine(&batch, &dataset, &embedding, &metric);
        assert_eq!(mined, oracle, "trial {trial} diverged");
        checked += 1;
    }
    report(4, "mining oracle", checked == 50, format!("{checked}/50 batches matched exactly"));
}

// ---------------------------------------------------------------------------
// 5. Retrieval equals full-sort brute force.

#[test]
fn criterion_5_retrieval_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    let mut checked = 0;
    for trial in 0..50 {
        let n = rng.gen_range(2..=100);
        let dim = 3;
        let mut samples: Vec<Sample> = (0..n)
            .map(|i| {
                Sample::new(
                    format!("g{i}"),
                    rng.gen_range(0..5),
                    rng.gen_range(20..25),
                    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
            })
            .collect();
        // Force exact score ties: clone some feature vectors verbatim.
        if n >= 4 {
            let src = rng.gen_range(0..n / 2);
            let dst = rng.gen_range(n / 2..n);
            samples[dst].features = samples[src].features.clone();
        }
        let gallery = Dataset::new(samples, dim);
        let w = DMatrix::from_fn(2, dim, |_, _| rng.gen_range(-1.0..1.0));
        let model = TrainedModel::new(
            EmbeddingModel::new(EmbeddingKind::Linear, w).unwrap(),
            DualMetric::new(
                MetricFactor::new(DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap(),
                MetricFactor::new(DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap(),
            )
            .unwrap(),
        )
        .unwrap();
        let query = Query {
            identity_ref: Sample::new(
                "q-id",
                0,
                30,
                (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            ),
            age_ref: Sample::new(
                "q-age",
                1,
                21,
                (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            ),
        };
        let lambda = 0.7;
        let k = rng.gen_range(1..=n);

        let got = retrieve(&gallery, &query, &model, lambda, k).unwrap();
        let scores: Vec<f64> = gallery
            .samples()
            .iter()
            .map(|s| dual_score(s, &query, &model.embedding, &model.metric, lambda).unwrap())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        assert_eq!(got.indices(), order[..k].to_vec(), "retrieve trial {trial}");

        let c = rng.gen_range(1..=n);
        let k2 = rng.gen_range(1..=c);
        let got_h = hierarchical_retrieve(&gallery, &query, &model, c, k2).unwrap();
        let fid = model.embedding.embed(&query.identity_ref.features).unwrap();
        let fage = model.embedding.embed(&query.age_ref.features).unwrap();
        let ind: Vec<f64> = gallery
            .samples()
            .iter()
            .map(|s| {
                mahalanobis(&model.metric.ind, &model.embedding.embed(&s.features).unwrap(), &fid)
                    .unwrap()
            })
            .collect();
        let mut stage1: Vec<usize> = (0..n).collect();
        stage1.sort_by(|&a, &b| ind[a].total_cmp(&ind[b]).then(a.cmp(&b)));
        stage1.truncate(c);
        let age: Vec<f64> = gallery
            .samples()
            .iter()
            .map(|s| {
                mahalanobis(&model.metric.age, &model.embedding.embed(&s.features).unwrap(), &fage)
                    .unwrap()
            })
            .collect();
        let mut stage2 = stage1;
        stage2.sort_by(|&a, &b| age[a].total_cmp(&age[b]).then(a.cmp(&b)));
        stage2.truncate(k2);
        assert_eq!(got_h.indices(), stage2, "hierarchical trial {trial}");
        checked += 1;
    }
    report(5, "retrieval oracle", checked == 50, format!("{checked}/50 galleries matched exactly"));
}

// ---------------------------------------------------------------------------
// 6. Quartet-loss spot values.

#[test]
fn criterion_6_loss_spot_values() {
    let metric = DualMetric::identity(2);
    let mut ok = true;
    let mut details = Vec::new();

    // Four identical embeddings: every Φ is 0, both hinges bite fully.
    let z = DVector::from_column_slice(&[0.3, -0.7]);
    for delta in [0.5, 1.0, 2.5] {
        let b = quartet_loss(&z, &z, &z, &z, &metric, delta).unwrap();
        if b.total != 2.0 * delta {
            ok = false;
        }
        details.push(format!("collapse δ={delta} → {}", b.total));
    }

    // Unit square: hinges vanish, both equalizers contribute 1.
    let f_im = DVector::from_column_slice(&[0.0, 0.0]);
    let f_in = DVector::from_column_slice(&[0.0, 1.0]);
    let f_jm = DVector::from_column_slice(&[1.0, 0.0]);
    let f_jn = DVector::from_column_slice(&[1.0, 1.0]);
    let b = quartet_loss(&f_im, &f_in, &f_jm, &f_jn, &metric, 1.0).unwrap();
    if b.total != 2.0 || b.hinge_age != 0.0 || b.hinge_ind != 0.0 || b.eq_age != 1.0 || b.eq_ind != 1.0
    {
        ok = false;
    }
    details.push(format!("unit square → {}", b.total));

    report(6, "loss spot values", ok, details.join("; "));
}

// ---------------------------------------------------------------------------
// Shared end-to-end benchmark for criteria 7–10.

const BENCH_AGES: [u16; 5] = [20, 21, 22, 23, 24];

fn bench_spec(sigma: f64, per_cell: u32) -> SyntheticSpec {
    SyntheticSpec {
        n_identities: 10,
        ages: BENCH_AGES.to_vec(),
        per_cell,
        dim: 32,
        separation: 4.0,
        age_step: 1.0,
        sigma,
        seed: 7,
    }
}

/// 100 held-out dual-reference queries: both references come from reference
/// slots (3, 4) that the per-cell-3 gallery never contains; the identity
/// reference shows the target person at a different age, the age reference a
/// different person at the target age. References are noise-free prototypes
/// (the latent cell positions pushed through the same feature map), matching
/// the latent-space oracle that defines target achievability; a noisy age
/// reference would bound top-1 below the required threshold no matter the
/// model, because its own age-axis noise biases every gallery comparison.
fn held_out_queries(gallery: &Dataset, refs: &Dataset) -> Vec<(Query, usize)> {
    let mut queries = Vec::with_capacity(100);
    for pass in 1..=2u32 {
        for c in 0..10u32 {
            for (ai, &age) in BENCH_AGES.iter().enumerate() {
                let other_age = BENCH_AGES[(ai + pass as usize) % BENCH_AGES.len()];
                let other_identity = (c + pass) % 10;
                let id_ref = format!("id{c:03}-age{other_age:03}-03");
                let age_ref = format!("id{other_identity:03}-age{age:03}-04");
                let target = gallery
                    .samples()
                    .iter()
                    .position(|s| s.identity == c && s.age == age)
                    .expect("gallery covers every cell");
                queries.push((
                    Query {
                        identity_ref: refs.sample(refs.index_of_id(&id_ref).unwrap()).clone(),
                        age_ref: refs.sample(refs.index_of_id(&age_ref).unwrap()).clone(),
                    },
                    target,
                ));
            }
        }
    }
    queries
}

struct BenchmarkRun {
    checkpoint_bytes: Vec<u8>,
    top_k_csv: String,
    cmc_csv: String,
    eval: EvalResult,
    wall_seconds: f64,
}

fn run_benchmark(sigma: f64) -> BenchmarkRun {
    let start = Instant::now();
    let gallery = generate_synthetic(&bench_spec(sigma, 3)).unwrap();
    let refs = generate_synthetic(&bench_spec(0.0, 5)).unwrap();
    let queries = held_out_queries(&gallery, &refs);
    let config = TrainConfig {
        log_every: 50,
        ..TrainConfig::default()
    };
    let run = fit(&gallery, &config).unwrap();
    let eval = evaluate(
        &gallery,
        &queries,
        &run.model,
        config.hyper.retrieve_lambda,
        &[1, 2, 3, 4, 5, 8, 10],
    )
    .unwrap();
    let wall_seconds = start.elapsed().as_secs_f64();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.drfm");
    save_checkpoint(&ModelCheckpoint::new(run.model.clone(), config.hyper.clone()), &path).unwrap();
    BenchmarkRun {
        checkpoint_bytes: std::fs::read(&path).unwrap(),
        top_k_csv: eval.top_k_csv(),
        cmc_csv: eval.cmc_csv(),
        eval,
        wall_seconds,
    }
}

struct SharedBenchmarks {
    first: BenchmarkRun,
    second: BenchmarkRun,
    noisy: BenchmarkRun,
    noisy_hier_top1: f64,
}

fn benchmarks() -> &'static SharedBenchmarks {
    static CELL: OnceLock<SharedBenchmarks> = OnceLock::new();
    CELL.get_or_init(|| {
        let first = run_benchmark(0.3);
        let second = run_benchmark(0.3);
        let noisy = run_benchmark(0.8);

        // Hierarchical baseline top-1 on the noisy benchmark, C = 20.
        let gallery = generate_synthetic(&bench_spec(0.8, 3)).unwrap();
        let refs = generate_synthetic(&bench_spec(0.0, 5)).unwrap();
        let queries = held_out_queries(&gallery, &refs);
        let config = TrainConfig {
            log_every: 50,
            ..TrainConfig::default()
        };
        let model = fit(&gallery, &config).unwrap().model;
        let mut hits = 0usize;
        for (q, _) in &queries {
            let ranked = hierarchical_retrieve(&gallery, q, &model, 20, 1).unwrap();
            let top = gallery.sample(ranked.indices()[0]);
            if top.identity == q.identity_ref.identity && top.age == q.age_ref.age {
                hits += 1;
            }
        }
        let noisy_hier_top1 = hits as f64 / queries.len() as f64;
        SharedBenchmarks {
            first,
            second,
            noisy,
            noisy_hier_top1,
        }
    })
}

#[test]
fn criterion_7_synthetic_end_to_end() {
    let b = benchmarks();
    let top1 = b.first.eval.top_k[&1];
    let top5 = b.first.eval.top_k[&5];
    let wall = b.first.wall_seconds;
    let pass = top1 >= 0.90 && top5 >= 0.98 && wall < 120.0;
    report(
        7,
        "synthetic end-to-end",
        pass,
        format!("top-1 {top1:.3}, top-5 {top5:.3}, {wall:.1}s"),
    );
}

#[test]
fn criterion_8_ordering_vs_hierarchical() {
    let b = benchmarks();
    let ours = b.noisy.eval.top_k[&1];
    let hier = b.noisy_hier_top1;
    report(
        8,
        "dual-reference vs hierarchical",
        ours >= hier,
        format!("dual-reference top-1 {ours:.3}, hierarchical C=20 top-1 {hier:.3}"),
    );
}

#[test]
fn criterion_9_determinism() {
    let b = benchmarks();
    let same_checkpoint = b.first.checkpoint_bytes == b.second.checkpoint_bytes;
    let same_csv = b.first.top_k_csv == b.second.top_k_csv && b.first.cmc_csv == b.second.cmc_csv;
    report(
        9,
        "bitwise determinism",
        same_checkpoint && same_csv,
        format!(
            "checkpoints identical: {same_checkpoint}, eval CSVs identical: {same_csv} ({} bytes)",
            b.first.checkpoint_bytes.len()
        ),
    );
}

#[test]
fn criterion_10_monotone_metrics() {
    let b = benchmarks();
    let mut ok = true;
    for eval in [&b.first.eval, &b.noisy.eval] {
        let accs: Vec<f64> = eval.top_k.values().copied().collect();
        ok &= accs.windows(2).all(|w| w[0] <= w[1]);
        ok &= eval.cmc.windows(2).all(|w| w[0] <= w[1]);
        ok &= eval.cmc.iter().chain(accs.iter()).all(|&v| (0.0..=1.0).contains(&v));
    }
    report(10, "monotone metrics", ok, "top-K and CMC non-decreasing, within [0,1]".to_string());
}

// ---------------------------------------------------------------------------

#[test]
fn benchmark_dataset_is_clean() {
    // Sanity guard for the shared fixtures: the generator's output passes
    // dataset validation (so criteria 7–10 exercise the real pipeline).
    let gallery = generate_synthetic(&bench_spec(0.3, 3)).unwrap();
    let violations: Vec<Violation> = drfr::model::validate_dataset(&gallery);
    assert!(violations.is_empty(), "{violations:?}");
    assert_eq!(gallery.len(), 150);
}
