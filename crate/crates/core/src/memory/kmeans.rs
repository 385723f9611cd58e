//! Lloyd's k-means with k-means++ seeding over memory queries.
//!
//! Centroids stay in raw query space (they are not projected back onto the
//! unit sphere).

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MemoryBuffer;
use crate::linalg::{argmin_by, sq_dist};
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CentroidSet {
    pub centroids: Vec<Vec<f64>>,
    /// `assignment[e]` is the centroid of memory entry `e`.
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

/// Groups the buffer's queries into `clusters` groups (reduced to the entry
/// count when larger).
pub fn cluster_memory(buffer: &MemoryBuffer, clusters: usize, seed: u64) -> Result<CentroidSet> {
    let points: Vec<&[f64]> = buffer.entries().iter().map(|e| e.query.as_slice()).collect();
    kmeans(&points, clusters, seed)
}

/// Centroid assigned to memory entry `entry`.
pub fn centroid_of(entry: usize, set: &CentroidSet) -> Result<&[f64]> {
    set.assignment
        .get(entry)
        .map(|&c| set.centroids[c].as_slice())
        .ok_or(Error::UnknownEntry(entry))
}

pub(crate) fn kmeans(points: &[&[f64]], clusters: usize, seed: u64) -> Result<CentroidSet> {
    if points.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if clusters == 0 {
        return Err(Error::invalid("B", "need at least one cluster"));
    }
    let k = clusters.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);

    let mut assignment = assign(points, &centroids);
    let mut inertia_trace = vec![inertia(points, &centroids, &assignment)];

    for _ in 0..MAX_ITERATIONS {
        update(points, &assignment, &mut centroids);
        let next = assign(points, &centroids);
        let current = inertia(points, &centroids, &next);
        let previous = *inertia_trace.last().unwrap_or(&current);
        inertia_trace.push(current);
        let settled = next == assignment;
        assignment = next;
        if settled || (previous - current).abs() <= REL_TOLERANCE * previous.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(CentroidSet {
        centroids,
        assignment,
        inertia_trace,
    })
}

fn plus_plus<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // every point coincides with a centroid already
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].to_vec());
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| argmin_by(centroids.iter().map(|c| sq_dist(p, c))).unwrap_or(0))
        .collect()
}

fn inertia(points: &[&[f64]], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

/// Moves every centroid to the mean of its points. An empty cluster is
/// re-seeded at the point farthest from its current centroid.
fn update(points: &[&[f64]], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    let mut taken = Vec::new();
    for (c, centroid) in centroids.iter_mut().enumerate() {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            for (dst, s) in centroid.iter_mut().zip(&sums[c]) {
                *dst = s / n;
            }
        }
    }
    for c in 0..centroids.len() {
        if counts[c] > 0 {
            continue;
        }
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .map(|(i, p)| (i, sq_dist(p, &centroids[assignment[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, b)) if d <= b => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = far {
            taken.push(i);
            centroids[c] = points[i].to_vec();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..6 {
            let e = i as f64 * 0.01;
            pts.push(vec![1.0 + e, 0.0 - e]);
            pts.push(vec![-5.0 - e, 4.0 + e]);
        }
        pts
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let set = kmeans(&refs, 1, 0).unwrap();
        assert!((set.centroids[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((set.centroids[0][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_count_is_capped_by_points() {
        let pts = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        assert_eq!(kmeans(&refs, 5, 0).unwrap().len(), 2);
    }

    #[test]
    fn separated_blobs_split_exactly() {
        let pts = blobs();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        for seed in 0..10 {
            let set = kmeans(&refs, 2, seed).unwrap();
            for (i, &c) in set.assignment.iter().enumerate() {
                assert_eq!(c, set.assignment[i % 2]);
            }
            assert_ne!(set.assignment[0], set.assignment[1]);
        }
    }

    #[test]
    fn inertia_never_increases() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.7;
                vec![libm::cos(t) * (1.0 + (i % 3) as f64), libm::sin(t * 1.3)]
            })
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let set = kmeans(&refs, 6, 9).unwrap();
        for w in set.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", set.inertia_trace);
        }
    }

    #[test]
    fn centroid_lookup() {
        let set = CentroidSet {
            centroids: vec![vec![1.0, 0.0]],
            assignment: vec![0, 0],
            inertia_trace: vec![0.0],
        };
        assert_eq!(centroid_of(1, &set).unwrap(), &[1.0, 0.0]);
        assert_eq!(centroid_of(2, &set), Err(Error::UnknownEntry(2)));
    }

    #[test]
    fn equidistant_point_takes_lower_centroid() {
        let cs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(assign(&[&[0.0, 1.0]], &cs), vec![0]);
    }
}
