//! Replay memory with key-driven sample selection, plus k-means clustering
//! of the stored queries.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::keyspace::MetaKeyPool;
use crate::vectorspace::{cosine_distance, QueryVector, SampleRecord};
use crate::{Error, Result};

mod kmeans;

pub use kmeans::{centroid_of, cluster_memory, CentroidSet};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryEntry {
    pub sample: SampleRecord,
    pub query: QueryVector,
    pub source_task: usize,
}

/// How the samples of a finished task are chosen for replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Nearest samples to each meta key, pooled and ranked by distance.
    KeyDiverse,
    /// Uniformly at random, seeded.
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryBuffer {
    entries: Vec<MemoryEntry>,
    per_task_capacity: usize,
}

impl MemoryBuffer {
    pub fn new(per_task_capacity: usize) -> Self {
        Self {
            entries: Vec::new(),
            per_task_capacity,
        }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn per_task_capacity(&self) -> usize {
        self.per_task_capacity
    }

    pub fn task_count(&self, task: usize) -> usize {
        self.entries.iter().filter(|e| e.source_task == task).count()
    }

    /// Memory entry whose query is closest to `key`; ties go to the earliest
    /// inserted entry. `None` when the buffer is empty.
    pub fn select_negative(&self, key: &[f64]) -> Result<Option<usize>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = cosine_distance(e.query.as_slice(), key)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        Ok(best.map(|(i, _)| i))
    }

    /// Adds up to `E` samples of a finished task.
    ///
    /// With [`Selection::KeyDiverse`], every meta key nominates its
    /// `ceil(E / M)` nearest samples; a sample nominated more than once keeps
    /// its smallest key distance, and the `E` candidates with the smallest
    /// distances are stored. If nominations overlap so much that fewer than
    /// `E` distinct samples come up, each key keeps nominating its next
    /// nearest sample until there are enough.
    pub fn update(
        &mut self,
        task: usize,
        samples: &[SampleRecord],
        queries: &[QueryVector],
        pool: Option<&MetaKeyPool>,
        selection: Selection,
    ) -> Result<usize> {
        if samples.len() != queries.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: queries.len(),
            });
        }
        if samples.is_empty() {
            return Err(Error::invalid("task_samples", "no samples to select from"));
        }
        let capacity = self.per_task_capacity.saturating_sub(self.task_count(task));
        let chosen = match (selection, pool) {
            (Selection::KeyDiverse, Some(pool)) => select_diverse(queries, pool, capacity)?,
            (Selection::KeyDiverse, None) => {
                return Err(Error::invalid("pool", "key-diverse selection needs meta keys"))
            }
            (Selection::Uniform { seed }, _) => select_uniform(samples.len(), capacity, seed),
        };
        for &i in &chosen {
            self.entries.push(MemoryEntry {
                sample: samples[i].clone(),
                query: queries[i].clone(),
                source_task: task,
            });
        }
        Ok(chosen.len())
    }
}

/// Indices of the samples chosen by the key-diverse rule, in rank order.
pub fn select_diverse(
    queries: &[QueryVector],
    pool: &MetaKeyPool,
    capacity: usize,
) -> Result<Vec<usize>> {
    let n = queries.len();
    if capacity >= n {
        return Ok((0..n).collect());
    }
    let quota = capacity.div_ceil(pool.len());

    // per key: sample indices sorted by distance, ties by sample order
    let mut rankings = Vec::with_capacity(pool.len());
    for key in pool.keys() {
        let mut ranked = queries
            .iter()
            .enumerate()
            .map(|(i, q)| cosine_distance(q.as_slice(), key).map(|d| (d, i)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rankings.push(ranked);
    }

    let mut best = alloc::vec![f64::INFINITY; n];
    let mut distinct = 0;
    for depth in 0..n {
        if depth >= quota && distinct >= capacity {
            break;
        }
        for ranked in &rankings {
            let (d, i) = ranked[depth];
            if best[i].is_infinite() {
                distinct += 1;
            }
            best[i] = best[i].min(d);
        }
    }

    let mut candidates: Vec<(f64, usize)> = best
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .map(|(i, &d)| (d, i))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(candidates.into_iter().take(capacity).map(|(_, i)| i).collect())
}

fn select_uniform(n: usize, capacity: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if capacity >= n {
        return idx;
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(capacity);
    idx.sort_unstable();
    idx
}

/// The candidate set nominated by the first `ceil(E / M)` ranks of every
/// key, before deduplication. Exposed for coverage checks.
pub fn nominations(queries: &[QueryVector], pool: &MetaKeyPool, capacity: usize) -> Result<Vec<Vec<usize>>> {
    let quota = capacity.div_ceil(pool.len()).min(queries.len());
    pool.keys()
        .iter()
        .map(|key| {
            let mut ranked = queries
                .iter()
                .enumerate()
                .map(|(i, q)| cosine_distance(q.as_slice(), key).map(|d| (d, i)))
                .collect::<Result<Vec<_>>>()?;
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            Ok(ranked.into_iter().take(quota).map(|(_, i)| i).collect())
        })
        .collect()
}
