use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<const D: usize> {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; D]>,
    pub iterations: usize,
}

impl<const D: usize> KMeansResult<D> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> usize {
    let mut best = 0;
    for (i, c) in centroids.iter().enumerate().skip(1) {
        if dist2(p, c) < dist2(p, &centroids[best]) {
            best = i;
        }
    }
    best
}

/// Lloyd's algorithm. The first centroid is a point drawn with `seed`; each
/// further one is the point farthest from those already chosen. An empty
/// cluster keeps its previous centroid. Requires `1 <= k <= points.len()`.
pub fn kmeans<const D: usize>(points: &[[f64; D]], k: usize, seed: u64) -> KMeansResult<D> {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=points.len()");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let mut far = 0;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min);
            if d > far_d {
                far = i;
                far_d = d;
            }
        }
        centroids.push(points[far]);
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 1;
    while iterations < MAX_ITERATIONS {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; D]> = points.iter().zip(&assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = [0.0; D];
            for m in &members {
                for (acc, x) in mean.iter_mut().zip(m.iter()) {
                    *acc += x;
                }
            }
            for x in &mut mean {
                *x /= members.len() as f64;
            }
            *centroid = mean;
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        iterations += 1;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansResult { assignments, centroids, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separates_two_blobs() {
        let points = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0]];
        for seed in 0..10 {
            let r = kmeans(&points, 2, seed);
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[0], r.assignments[2]);
            assert_eq!(r.assignments[3], r.assignments[4]);
            assert_ne!(r.assignments[0], r.assignments[3]);
        }
    }

    #[test]
    fn identical_points_leave_a_cluster_empty() {
        let points = [[0.5, 0.5]; 4];
        let r = kmeans(&points, 2, 3);
        assert_eq!(r.cluster_sizes(), vec![4, 0]);
    }

    proptest! {
        #[test]
        fn deterministic_and_in_range(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30),
            seed in any::<u64>(),
        ) {
            let points: Vec<[f64; 2]> = raw.iter().map(|&(a, b)| [a, b]).collect();
            let a = kmeans(&points, 2, seed);
            prop_assert_eq!(&a, &kmeans(&points, 2, seed));
            prop_assert!(a.iterations <= MAX_ITERATIONS);
            prop_assert!(a.assignments.iter().all(|&c| c < 2));
            // converged assignment is a fixed point of the nearest rule
            if a.iterations < MAX_ITERATIONS {
                for (p, &c) in points.iter().zip(&a.assignments) {
                    prop_assert_eq!(nearest(p, &a.centroids), c);
                }
            }
        }
    }
}
