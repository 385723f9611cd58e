//! Task prompt keys, the meta prompt key pool, and routing over them.
//!
//! Keys are raw (unnormalized) vectors in query space; every comparison uses
//! cosine distance, so their scale never matters. Loss functions live in
//! [`loss`], adaptive boundaries in [`boundary`].

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{all_finite, argmin_by};
use crate::vectorspace::cosine_distance;
use crate::{Error, Result};

pub mod boundary;
pub mod loss;

pub use boundary::{
    boundary_loss, detect_task, fit_boundary, fit_boundary_from, train_adb, AdbConfig, BoundaryMode,
    Detection,
};
pub use loss::{
    meta_centroid_loss, meta_pull_push_loss, task_triplet_loss, KeyLoss, MetaLoss, MetaTerms,
};

/// Boundary used when a task has no learned boundary, and by the
/// fixed-boundary detector.
pub const FIXED_BOUNDARY: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Margins {
    /// Pull margin: keys within `eta` of their target are not pulled further.
    pub eta: f64,
    /// Push margin: selected keys closer than `gamma` repel each other.
    pub gamma: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            eta: 0.15,
            gamma: 0.3,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::invalid("margins", "eta and gamma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskKey {
    pub task_id: usize,
    pub key: Vec<f64>,
    /// Radius `delta` around the key; `None` until boundary training.
    pub boundary: Option<f64>,
}

impl TaskKey {
    pub fn new(task_id: usize, key: Vec<f64>) -> Result<Self> {
        if key.is_empty() || !all_finite(&key) {
            return Err(Error::invalid("task key", "empty or non-finite"));
        }
        Ok(Self {
            task_id,
            key,
            boundary: None,
        })
    }

    /// Boundary used by adaptive detection.
    pub fn radius(&self) -> f64 {
        self.boundary.unwrap_or(FIXED_BOUNDARY)
    }
}

/// Pool of `M` meta prompt keys from which `M'` are selected per query.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetaKeyPool {
    keys: Vec<Vec<f64>>,
    select: usize,
}

impl MetaKeyPool {
    pub fn new(keys: Vec<Vec<f64>>, select: usize) -> Result<Self> {
        if select == 0 || select > keys.len() {
            return Err(Error::invalid("M'", "need 1 <= M' <= M"));
        }
        let dim = keys[0].len();
        if keys.iter().any(|k| k.len() != dim || !all_finite(k)) {
            return Err(Error::invalid("meta keys", "ragged or non-finite"));
        }
        Ok(Self { keys, select })
    }

    /// `size` keys drawn i.i.d. uniformly on the unit sphere.
    pub fn random<R: Rng + ?Sized>(
        size: usize,
        select: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let keys = (0..size)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let n = crate::linalg::norm(&v);
                if n > 1e-6 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Self::new(keys, select)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn select_size(&self) -> usize {
        self.select
    }

    pub fn keys(&self) -> &[Vec<f64>] {
        &self.keys
    }

    pub fn key(&self, index: usize) -> &[f64] {
        &self.keys[index]
    }

    pub(crate) fn key_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.keys[index]
    }
}

/// Indices of the `M'` keys closest to `q`, in ascending index order.
///
/// Ties in distance go to the lower key index.
pub fn top_m_prime(q: &[f64], pool: &MetaKeyPool) -> Result<Vec<usize>> {
    nearest_k(q, pool.keys(), pool.select_size())
}

/// The `k` entries of `points` closest to `q`, ascending by index.
pub(crate) fn nearest_k<P: AsRef<[f64]>>(q: &[f64], points: &[P], k: usize) -> Result<Vec<usize>> {
    let mut ranked = points
        .iter()
        .enumerate()
        .map(|(i, p)| cosine_distance(q, p.as_ref()).map(|d| (d, i)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Index of the memory entry closest to `key`: the triplet negative. `None`
/// for an empty buffer, in which case the negative term is dropped.
pub fn select_negative(memory: &crate::memory::MemoryBuffer, key: &[f64]) -> Result<Option<usize>> {
    memory.select_negative(key)
}

/// Task id of the key closest to `q`; ties go to the lowest position in
/// `keys`. `None` for an empty key list.
pub fn nearest_task(q: &[f64], keys: &[TaskKey]) -> Result<Option<usize>> {
    let distances = keys
        .iter()
        .map(|k| cosine_distance(q, &k.key))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmin_by(distances).map(|i| keys[i].task_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Unit vector in the plane at cosine distance `d` from e0.
    fn at_distance(d: f64) -> Vec<f64> {
        let c = 1.0 - d;
        vec![c, libm::sqrt(1.0 - c * c)]
    }

    #[test]
    fn top_m_prime_picks_nearest_in_index_order() {
        let keys = [0.4, 0.1, 0.3, 0.2, 0.5].map(at_distance).to_vec();
        let pool = MetaKeyPool::new(keys, 2).unwrap();
        assert_eq!(top_m_prime(&[1.0, 0.0], &pool).unwrap(), vec![1, 3]);
    }

    #[test]
    fn top_m_prime_all_and_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = MetaKeyPool::random(6, 6, 4, &mut rng).unwrap();
        let q = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(top_m_prime(&q, &pool).unwrap(), (0..6).collect::<Vec<_>>());

        let mut keys = pool.keys().to_vec();
        keys[4] = q.clone();
        let pool = MetaKeyPool::new(keys, 1).unwrap();
        assert_eq!(top_m_prime(&q, &pool).unwrap(), vec![4]);
    }

    #[test]
    fn top_m_prime_tie_prefers_lower_index() {
        let keys = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        let pool = MetaKeyPool::new(keys, 1).unwrap();
        assert_eq!(top_m_prime(&[1.0, 0.0], &pool).unwrap(), vec![1]);
    }

    #[test]
    fn pool_rejects_bad_selection_size() {
        assert!(MetaKeyPool::new(vec![vec![1.0]], 0).is_err());
        assert!(MetaKeyPool::new(vec![vec![1.0]], 2).is_err());
    }

    #[test]
    fn nearest_task_cases() {
        let keys = vec![TaskKey::new(7, vec![1.0, 0.0]).unwrap()];
        assert_eq!(nearest_task(&[0.0, 1.0], &keys).unwrap(), Some(7));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keys: Vec<TaskKey> = (0..5)
            .map(|t| {
                let v = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
                TaskKey::new(t, v).unwrap()
            })
            .collect();
        assert_eq!(nearest_task(&keys[2].key.clone(), &keys).unwrap(), Some(2));

        let keys: Vec<TaskKey> = [0.3, 0.3, 0.5]
            .iter()
            .enumerate()
            .map(|(t, &d)| TaskKey::new(t, at_distance(d)).unwrap())
            .collect();
        assert_eq!(nearest_task(&[1.0, 0.0], &keys).unwrap(), Some(0));
        assert_eq!(nearest_task(&[1.0, 0.0], &[]).unwrap(), None);
    }

    #[test]
    fn random_pool_is_unit_and_seeded() {
        let a = MetaKeyPool::random(5, 2, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = MetaKeyPool::random(5, 2, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        for k in a.keys() {
            assert!((crate::linalg::norm(k) - 1.0).abs() < 1e-12);
        }
    }
}
