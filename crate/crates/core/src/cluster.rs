//! Operating-state identification with Lloyd's K-Means.
//!
//! Initialization is k-means++ and the best of several seeded restarts is
//! kept. An empty cluster is reseeded at the point farthest from its own
//! centroid, lowest index on ties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MafnError, Result};

/// Which columns were clustered. Operating settings for C-MAPSS.
pub const SETTINGS_FEATURES: &str = "op_settings[0..3]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each training point to its nearest centroid.
    pub inertia: f64,
    pub feature_spec: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-10,
            restarts: 10,
            seed,
        }
    }
}

/// Trace of one restart: `inertia_history[i]` is the objective right
/// after the `i`-th assignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub inertia: f64,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub runs: Vec<LloydRun>,
    pub best_run: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

pub fn kmeans_fit(points: &[Vec<f64>], params: &KMeansParams) -> Result<KMeansFit> {
    let k = params.k;
    if k == 0 {
        return Err(MafnError::Contract("k must be at least 1".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(MafnError::Contract(
            "points must be non-empty with a common dimension".into(),
        ));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MafnError::Numeric("non-finite clustering feature".into()));
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(MafnError::Contract(format!(
            "{distinct} distinct points cannot form {k} clusters"
        )));
    }
    let mut runs = Vec::with_capacity(params.restarts.max(1));
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    for r in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(r as u64);
        let init = kmeans_plus_plus(points, k, &mut rng);
        let (centroids, run) = lloyd(points, init, params.max_iter, params.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.1) {
            best = Some((r, run.inertia, centroids));
        }
        runs.push(run);
    }
    let (best_run, inertia, centroids) = best.expect("at least one restart");
    Ok(KMeansFit {
        model: ClusterModel {
            k,
            inertia,
            centroids,
            feature_spec: SETTINGS_FEATURES.to_string(),
        },
        runs,
        best_run,
    })
}

/// Greedy k-means++: each new centre is the best of `2 + ⌊ln k⌋`
/// D²-sampled candidates by resulting potential.
fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize)> = None;
        for _ in 0..trials {
            let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("enough distinct points");
            let mut u = rng.gen::<f64>() * total;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            let potential: f64 = d2
                .iter()
                .zip(points)
                .map(|(&d, p)| d.min(squared_distance(p, &points[pick])))
                .sum();
            if best.is_none_or(|(b, _)| potential < b) {
                best = Some((potential, pick));
            }
        }
        let c = points[best.expect("at least one trial").1].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(p, centroids);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> (Vec<Vec<f64>>, LloydRun) {
    let k = centroids.len();
    let dim = points[0].len();
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / n as f64).collect()
                }
            })
            .collect();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            // farthest point from its own (updated) centroid
            let mut far = (0, -1.0);
            for (i, (p, &l)) in points.iter().zip(&labels).enumerate() {
                let d = squared_distance(p, &next[l]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            next[j] = points[far.0].clone();
            labels[far.0] = j;
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let (new_labels, new_inertia) = assign(points, &centroids);
        history.push(new_inertia);
        let fixpoint = new_labels == labels;
        labels = new_labels;
        inertia = new_inertia;
        if fixpoint || shift < tol {
            break;
        }
    }
    (
        centroids,
        LloydRun {
            inertia_history: history,
            iterations,
            inertia,
        },
    )
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    pub fn assign_state(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(MafnError::Contract(format!(
                "point has dimension {}, centroids have {}",
                point.len(),
                self.dim()
            )));
        }
        Ok(nearest(point, &self.centroids).0)
    }

    pub fn assign_all<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<Vec<usize>> {
        points.iter().map(|p| self.assign_state(p.as_ref())).collect()
    }

    /// Renumbers clusters by descending training count, then by
    /// lexicographic centroid, so labels do not depend on the seed.
    pub fn relabel_canonical<P: AsRef<[f64]>>(&self, train_points: &[P]) -> Result<ClusterModel> {
        let mut counts = vec![0usize; self.k];
        for p in train_points {
            counts[self.assign_state(p.as_ref())?] += 1;
        }
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| {
            counts[b].cmp(&counts[a]).then_with(|| {
                self.centroids[a]
                    .iter()
                    .zip(&self.centroids[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        Ok(ClusterModel {
            k: self.k,
            centroids: order.iter().map(|&j| self.centroids[j].clone()).collect(),
            inertia: self.inertia,
            feature_spec: self.feature_spec.clone(),
        })
    }

    /// Training-point count per cluster id.
    pub fn counts<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; self.k];
        for p in points {
            counts[self.assign_state(p.as_ref())?] += 1;
        }
        Ok(counts)
    }

    pub fn inertia_of<P: AsRef<[f64]>>(&self, points: &[P]) -> f64 {
        points.iter().map(|p| nearest(p.as_ref(), &self.centroids).1).sum()
    }
}
