//! Gaussian cluster embeddings for tests and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embedding::{EmbeddingRecord, EmbeddingStore};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSpec {
    pub classes: usize,
    pub dim: usize,
    /// Minimum distance between any two class centers.
    pub center_distance: f64,
    /// Per-coordinate standard deviation around each center.
    pub sigma: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 16,
            center_distance: 10.0,
            sigma: 1.0,
            per_class: 40,
            seed: 0,
        }
    }
}

/// Class centers on the sphere of radius `center_distance`, redrawn until
/// every pair is at least `center_distance` apart.
pub fn cluster_centers(spec: &ClusterSpec) -> Result<Vec<Vec<f64>>> {
    let mut r = rng::seeded(rng::derive(spec.seed, 0));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Config(format!(
                    "could not place center {c} at distance {} in {} dimensions",
                    spec.center_distance, spec.dim
                )));
            }
            let v: Vec<f64> = (0..spec.dim)
                .map(|_| StandardNormal.sample(&mut r))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            let v: Vec<f64> = v.iter().map(|x| x / n * spec.center_distance).collect();
            let far = centers.iter().all(|u| {
                u.iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= spec.center_distance
            });
            if far {
                centers.push(v);
                break;
            }
        }
    }
    Ok(centers)
}

/// Labels are `class-00`, `class-01`, ...; ids are `<class>/<i>`.
pub fn gaussian_clusters(spec: &ClusterSpec) -> Result<EmbeddingStore> {
    if spec.classes == 0 || spec.dim == 0 || spec.per_class == 0 || !(spec.sigma >= 0.0) {
        return Err(Error::Config(
            "cluster spec needs positive sizes and sigma >= 0".into(),
        ));
    }
    let centers = cluster_centers(spec)?;
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let width = (spec.classes - 1).max(1).to_string().len().max(2);
    let mut r = rng::seeded(rng::derive(spec.seed, 1));
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, center) in centers.iter().enumerate() {
        let label = format!("class-{c:0width$}");
        for i in 0..spec.per_class {
            let vector = center.iter().map(|m| m + noise.sample(&mut r)).collect();
            records.push(EmbeddingRecord {
                id: format!("{label}/{i}"),
                label: label.clone(),
                vector,
            });
        }
    }
    EmbeddingStore::from_records(spec.dim, records)
}

/// Linearly separable two-class points in `dim` dimensions, for small
/// convergence fixtures: class `c` sits around `±2` on axis 0.
pub fn separable_pair<R: Rng + ?Sized>(
    dim: usize,
    per_class: usize,
    rng: &mut R,
) -> Vec<Vec<Vec<f64>>> {
    (0..2)
        .map(|c| {
            let sign = if c == 0 { 2.0 } else { -2.0 };
            (0..per_class)
                .map(|_| {
                    (0..dim)
                        .map(|j| if j == 0 { sign } else { 0.0 } + rng.random_range(-0.5..0.5))
                        .collect()
                })
                .collect()
        })
        .collect()
}
