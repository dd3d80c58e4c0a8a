use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no vectors to cluster")]
    Empty,
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} exceeds the {n} available vectors")]
    TooFewVectors { k: usize, n: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances of the final assignment.
    pub objective: f64,
    /// Objective after each assignment step, first to last.
    pub history: Vec<f64>,
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centroids(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &vectors[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("total is positive");
            }
            pick
        } else {
            // Every remaining point coincides with a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(v, &vectors[next]));
        }
    }
    chosen.into_iter().map(|i| vectors[i].clone()).collect()
}

fn update_centroids(vectors: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|x| x / c as f64).collect()))
        .collect()
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Stops when an assignment step changes nothing or after `max_iters` centroid
/// updates. The last step is always an assignment step, so every point ends
/// on a nearest centroid. An emptied cluster is reseeded with the point
/// farthest from its own centroid.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel, ClusterError> {
    if vectors.is_empty() {
        return Err(ClusterError::Empty);
    }
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > vectors.len() {
        return Err(ClusterError::TooFewVectors { k, n: vectors.len() });
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(ClusterError::Dimension { index, expected: dim, found: v.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(vectors, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    loop {
        let (next, dists): (Vec<usize>, Vec<f64>) = vectors.iter().map(|v| nearest(v, &centroids)).unzip();
        history.push(dists.iter().sum());
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        if iter == max_iters {
            break;
        }
        iter += 1;

        let means = update_centroids(vectors, &assignments, k, dim);
        // Distance of each point to its own (non-empty) cluster mean.
        let own: Vec<f64> = vectors
            .iter()
            .zip(&assignments)
            .map(|(v, &a)| means[a].as_ref().map_or(0.0, |m| squared_distance(v, m)))
            .collect();
        let mut taken: Vec<usize> = Vec::new();
        let mut fresh = Vec::with_capacity(k);
        for mean in &means {
            match mean {
                Some(c) => fresh.push(c.clone()),
                None => {
                    let far = (0..vectors.len())
                        .filter(|i| !taken.contains(i))
                        .max_by(|&a, &b| own[a].total_cmp(&own[b]).then(b.cmp(&a)))
                        .expect("k <= n leaves a point to reseed with");
                    taken.push(far);
                    fresh.push(vectors[far].clone());
                }
            }
        }
        centroids = fresh;
    }

    let objective = *history.last().expect("at least one assignment step");
    Ok(ClusterModel { k, centroids, assignments, objective, history, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn distinct_points_get_their_own_clusters() {
        let v = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
        let m = kmeans(&v, 3, 7, 50).unwrap();
        let mut a = m.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 3);
        assert_eq!(m.objective, 0.0);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let v: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i * 3 % 5) as f64]).collect();
        assert_eq!(kmeans(&v, 4, 99, 100).unwrap(), kmeans(&v, 4, 99, 100).unwrap());
    }

    #[test]
    fn recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers = [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]];
        let mut v = Vec::new();
        let mut truth = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..20 {
                v.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
                truth.push(label);
            }
        }
        let m = kmeans(&v, 3, 11, 100).unwrap();
        // Same partition up to relabeling: pairs agree on "same cluster".
        for i in 0..v.len() {
            for j in 0..v.len() {
                assert_eq!(truth[i] == truth[j], m.assignments[i] == m.assignments[j]);
            }
        }
    }

    #[test]
    fn input_errors() {
        assert_eq!(kmeans(&[], 1, 0, 10), Err(ClusterError::Empty));
        assert_eq!(kmeans(&[vec![1.0]], 2, 0, 10), Err(ClusterError::TooFewVectors { k: 2, n: 1 }));
        assert_eq!(kmeans(&[vec![1.0]], 0, 0, 10), Err(ClusterError::ZeroK));
        assert!(matches!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0, 10), Err(ClusterError::Dimension { .. })));
    }

    #[test]
    fn duplicate_points_still_seed_k_centroids() {
        let v = vec![vec![1.0, 1.0]; 5];
        let m = kmeans(&v, 3, 0, 10).unwrap();
        assert_eq!(m.centroids.len(), 3);
        assert_eq!(m.objective, 0.0);
    }

    #[test]
    fn iteration_cap_ends_on_assignment() {
        let v: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 10.0, (i as f64 * 0.7).cos() * 10.0]).collect();
        let m = kmeans(&v, 5, 1, 0).unwrap();
        assert_eq!(m.history.len(), 1);
        assert!(!m.converged);
    }

    proptest! {
        #[test]
        fn objective_monotone_and_assignments_nearest(
            pts in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            prop_assume!(k <= pts.len());
            let m = kmeans(&pts, k, seed, 100).unwrap();
            for w in m.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "objective rose: {:?}", m.history);
            }
            for (i, v) in pts.iter().enumerate() {
                prop_assert!(m.assignments[i] < k);
                let own = squared_distance(v, &m.centroids[m.assignments[i]]);
                for c in &m.centroids {
                    prop_assert!(own <= squared_distance(v, c) + 1e-9);
                }
            }
            prop_assert!(m.centroids.iter().all(|c| c.len() == 3));
        }
    }
}
