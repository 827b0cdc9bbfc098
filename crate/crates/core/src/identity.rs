//! Identity vectors, k-means clustering of a population, replacer selection
//! by distance rank, and identity replacement that preserves expression,
//! pose, lighting, and skin tone.

use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{SemanticParams, ALPHA_DIM, BETA_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// Reflectance dimensions that stay fixed during replacement because they
/// control global skin tone (zero-based; the first, third, and fourth modes).
pub const FROZEN_BETA_DIMS: [usize; 3] = [0, 2, 3];

/// Identity parameters: alpha (80) followed by the 77 non-frozen beta dims.
pub const IDENTITY_DIM: usize = ALPHA_DIM + BETA_DIM - FROZEN_BETA_DIMS.len();

/// A point in identity-parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityVector(pub Vec<f64>);

impl IdentityVector {
    pub fn zeros() -> Self {
        Self(vec![0.0; IDENTITY_DIM])
    }

    pub fn distance(&self, other: &IdentityVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Project the identity-defining block out of a parameter vector.
pub fn extract_identity(p: &SemanticParams) -> IdentityVector {
    let mut v = Vec::with_capacity(IDENTITY_DIM);
    v.extend(p.alpha.iter());
    for i in 0..BETA_DIM {
        if !FROZEN_BETA_DIMS.contains(&i) {
            v.push(p.beta[i]);
        }
    }
    IdentityVector(v)
}

/// Write an identity vector back into a parameter vector. Expression, pose,
/// lighting, and the frozen beta dims are bit-identical to `p`.
pub fn replace_identity(p: &SemanticParams, replacement: &IdentityVector) -> SemanticParams {
    assert_eq!(replacement.0.len(), IDENTITY_DIM);
    let mut out = p.clone();
    for i in 0..ALPHA_DIM {
        out.alpha[i] = replacement.0[i];
    }
    let mut k = ALPHA_DIM;
    for i in 0..BETA_DIM {
        if !FROZEN_BETA_DIMS.contains(&i) {
            out.beta[i] = replacement.0[k];
            k += 1;
        }
    }
    out
}

/// K-means result over a population of identity vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSet {
    pub centroids: Vec<IdentityVector>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_CLUSTER_COUNT: usize = 15;
const MAX_KMEANS_ITERS: usize = 200;
const SHIFT_TOL: f64 = 1e-8;

/// Lloyd's k-means with k-means++ seeding over Euclidean distance.
///
/// Runs at most 200 iterations or until the largest centroid shift drops
/// below 1e-8. Empty clusters are repaired by re-seeding them at the farthest
/// member of the largest cluster.
pub fn cluster_identities(samples: &[IdentityVector], k: usize, seed: u64) -> Result<ClusterSet> {
    if k == 0 {
        return Err(Error::invalid("cluster count must be positive"));
    }
    if samples.len() < k {
        return Err(Error::invalid(format!(
            "need at least {k} samples to form {k} clusters, got {}",
            samples.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(samples, k, &mut rng);
    let mut assignment = vec![0usize; samples.len()];

    for _ in 0..MAX_KMEANS_ITERS {
        // Assign.
        for (i, s) in samples.iter().enumerate() {
            assignment[i] = nearest(&centroids, s).0;
        }
        // Repair empty clusters before the update step.
        loop {
            let counts = count_members(&assignment, k);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let largest = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            // Farthest member of the largest cluster becomes the seed.
            let far = samples
                .iter()
                .enumerate()
                .filter(|(i, _)| assignment[*i] == largest)
                .max_by(|a, b| {
                    let da = a.1.distance(&centroids[largest]);
                    let db = b.1.distance(&centroids[largest]);
                    da.partial_cmp(&db).unwrap().then(b.0.cmp(&a.0))
                })
                .map(|(i, _)| i)
                .unwrap();
            centroids[empty] = samples[far].clone();
            assignment[far] = empty;
        }
        // Update.
        let mut sums = vec![vec![0.0; IDENTITY_DIM]; k];
        let counts = count_members(&assignment, k);
        for (i, s) in samples.iter().enumerate() {
            let acc = &mut sums[assignment[i]];
            for (a, v) in acc.iter_mut().zip(&s.0) {
                *a += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new = IdentityVector(sums[c].iter().map(|v| v / counts[c] as f64).collect());
            shift = shift.max(new.distance(&centroids[c]));
            centroids[c] = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }

    for (i, s) in samples.iter().enumerate() {
        assignment[i] = nearest(&centroids, s).0;
    }
    let counts = count_members(&assignment, k);
    Ok(ClusterSet {
        centroids,
        counts,
        seed,
    })
}

fn kmeans_pp_init(
    samples: &[IdentityVector],
    k: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<IdentityVector> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(samples[rng.gen_range(0..samples.len())].clone());
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| s.distance(&centroids[0]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // All remaining points coincide with a centroid; pick uniformly.
            rng.gen_range(0..samples.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = samples.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(samples[idx].clone());
        for (i, s) in samples.iter().enumerate() {
            d2[i] = d2[i].min(s.distance(centroids.last().unwrap()).powi(2));
        }
    }
    centroids
}

fn nearest(centroids: &[IdentityVector], s: &IdentityVector) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = s.distance(cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn count_members(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    counts
}

/// Within-cluster sum of squares for a sample set under given centroids.
pub fn clustering_objective(samples: &[IdentityVector], centroids: &[IdentityVector]) -> f64 {
    samples
        .iter()
        .map(|s| nearest(centroids, s).1.powi(2))
        .sum()
}

/// Index of the nearest centroid to an identity vector.
pub fn nearest_centroid(centroids: &[IdentityVector], v: &IdentityVector) -> usize {
    nearest(centroids, v).0
}

impl ClusterSet {
    /// Centroid at the given distance rank from the query identity
    /// (1 = nearest, k = farthest); ties break toward the lower centroid
    /// index.
    pub fn select_replacer(&self, p: &SemanticParams, rank: usize) -> Result<IdentityVector> {
        if self.centroids.is_empty() {
            return Err(Error::invalid("cluster set is empty"));
        }
        if rank < 1 || rank > self.centroids.len() {
            return Err(Error::invalid(format!(
                "replacer rank must be in 1..={}, got {rank}",
                self.centroids.len()
            )));
        }
        let query = extract_identity(p);
        let mut order: Vec<usize> = (0..self.centroids.len()).collect();
        order.sort_by(|&a, &b| {
            let da = self.centroids[a].distance(&query);
            let db = self.centroids[b].distance(&query);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        Ok(self.centroids[order[rank - 1]].clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let k = self.centroids.len();
        let mut flat = Vec::with_capacity(k * IDENTITY_DIM);
        for c in &self.centroids {
            flat.extend_from_slice(&c.0);
        }
        let mut container = Container::new();
        container.put_f64("centroids", vec![k, IDENTITY_DIM], &flat);
        let counts: Vec<i64> = self.counts.iter().map(|&c| c as i64).collect();
        container.put_i64("counts", vec![k], &counts);
        container.put_i64("seed", vec![1], &[self.seed as i64]);
        container.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let container = Container::load(path)?;
        let (dims, flat) = container.f64_tensor("centroids")?;
        if dims.len() != 2 || dims[1] != IDENTITY_DIM {
            return Err(Error::format(format!(
                "centroids must be k x {IDENTITY_DIM}, got {dims:?}"
            )));
        }
        let k = dims[0];
        let centroids = flat
            .chunks_exact(IDENTITY_DIM)
            .map(|c| IdentityVector(c.to_vec()))
            .collect();
        let (_, counts) = container.i64_tensor("counts")?;
        if counts.len() != k {
            return Err(Error::format("counts length does not match centroid count"));
        }
        let (_, seed) = container.i64_tensor("seed")?;
        Ok(Self {
            centroids,
            counts: counts.iter().map(|&c| c.max(0) as usize).collect(),
            seed: seed.first().copied().unwrap_or(0) as u64,
        })
    }
}
