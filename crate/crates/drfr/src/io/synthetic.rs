//! Synthetic dataset generation with a planted identity/age latent
//! structure, standing in for real image-embedding corpora.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dataset, Sample};

/// Recipe for a planted-structure dataset: each (identity, age) cell gets a
/// latent center and `per_cell` noisy samples around it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_identities: u32,
    pub ages: Vec<u16>,
    pub per_cell: u32,
    pub dim: usize,
    pub separation: f64,
    pub age_step: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 {
            return Err(Error::invalid("n_identities", "must be positive"));
        }
        if self.ages.is_empty() {
            return Err(Error::invalid("ages", "must be non-empty"));
        }
        if !self.ages.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("ages", "must be strictly increasing"));
        }
        if self.per_cell == 0 {
            return Err(Error::invalid("per_cell", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::invalid("separation", "must be positive and finite"));
        }
        if !(self.age_step.is_finite() && self.age_step > 0.0) {
            return Err(Error::invalid("age_step", "must be positive and finite"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be non-negative and finite"));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample stream seed. Depends only on (master seed, identity, age,
/// slot), so growing `per_cell` or the age list never disturbs the samples
/// that already existed.
fn sample_seed(seed: u64, identity: u32, age: u16, slot: u32) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ u64::from(identity));
    h = splitmix64(h ^ u64::from(age));
    splitmix64(h ^ u64::from(slot))
}

fn unit_gaussian_direction(rng: &mut ChaCha20Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Random proper rotation: QR of a Gaussian matrix, columns sign-fixed so Q
/// is Haar-distributed, then determinant forced to +1.
fn random_rotation(rng: &mut ChaCha20Rng, dim: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        let last = dim - 1;
        for i in 0..dim {
            q[(i, last)] = -q[(i, last)];
        }
    }
    q
}

/// Latent cell centers in generation order: identity directions first, then
/// the shared age direction, then the ambient rotation — all from one seeded
/// stream so the layout is a pure function of the spec.
fn cell_centers(spec: &SyntheticSpec) -> Vec<Vec<DVector<f64>>> {
    let mut master = ChaCha20Rng::seed_from_u64(spec.seed);
    let identity_dirs: Vec<DVector<f64>> = (0..spec.n_identities)
        .map(|_| unit_gaussian_direction(&mut master, spec.dim))
        .collect();
    let age_dir = unit_gaussian_direction(&mut master, spec.dim);
    let rotation = random_rotation(&mut master, spec.dim);

    identity_dirs
        .iter()
        .map(|u| {
            spec.ages
                .iter()
                .map(|&a| {
                    let latent = u * spec.separation + &age_dir * (f64::from(a) * spec.age_step);
                    &rotation * latent
                })
                .collect()
        })
        .collect()
}

/// Generates the dataset described by `spec`. Sample ids follow
/// `id{identity:03}-age{age:03}-{slot:02}`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = cell_centers(spec);
    let mut samples =
        Vec::with_capacity(spec.n_identities as usize * spec.ages.len() * spec.per_cell as usize);
    for c in 0..spec.n_identities {
        for (ai, &age) in spec.ages.iter().enumerate() {
            let center = &centers[c as usize][ai];
            for s in 0..spec.per_cell {
                let features: Vec<f64> = if spec.sigma == 0.0 {
                    center.iter().copied().collect()
                } else {
                    let mut rng = ChaCha20Rng::seed_from_u64(sample_seed(spec.seed, c, age, s));
                    center
                        .iter()
                        .map(|&x| x + spec.sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                };
                samples.push(Sample::new(
                    format!("id{c:03}-age{age:03}-{s:02}"),
                    c,
                    age,
                    features,
                ));
            }
        }
    }
    Ok(Dataset::new(samples, spec.dim))
}
