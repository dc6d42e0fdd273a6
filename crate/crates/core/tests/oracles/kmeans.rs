//! K-Means against exhaustive search, plus Lloyd monotonicity and invariances.

use mafn_core::cluster::{kmeans_fit, KMeansParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for j in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == j)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

/// Minimum within-cluster sum of squares over all `k^n` labelings.
fn exhaustive_optimum(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(sse(points, &labels, k));
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn instance(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=3);
    let n = rng.gen_range(k.max(2)..=10);
    let dim = rng.gen_range(1..=3);
    let points = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    (points, k)
}

pub fn best_of_ten_restarts_is_globally_optimal() {
    for seed in 0..100 {
        let (points, k) = instance(seed);
        let fit = kmeans_fit(&points, &KMeansParams::new(k, seed)).unwrap();
        let opt = exhaustive_optimum(&points, k);
        assert!(
            (fit.model.inertia - opt).abs() <= 1e-9,
            "seed {seed}: k-means {} vs optimum {opt}",
            fit.model.inertia
        );
        assert_eq!(fit.runs.len(), 10);
    }
}

pub fn lloyd_objective_never_increases() {
    for seed in 0..100 {
        let (points, k) = instance(1000 + seed);
        let fit = kmeans_fit(&points, &KMeansParams::new(k, seed)).unwrap();
        for run in &fit.runs {
            for w in run.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", run.inertia_history);
            }
        }
    }
}

pub fn three_blobs_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let means = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let points: Vec<Vec<f64>> = (0..300)
        .map(|i| {
            let m = means[i % 3];
            vec![m[0] + rng.gen_range(-0.5..0.5), m[1] + rng.gen_range(-0.5..0.5)]
        })
        .collect();
    let fit = kmeans_fit(&points, &KMeansParams::new(3, 1)).unwrap();
    for m in means {
        assert!(fit
            .model
            .centroids
            .iter()
            .any(|c| (c[0] - m[0]).abs() < 0.2 && (c[1] - m[1]).abs() < 0.2));
    }
}
