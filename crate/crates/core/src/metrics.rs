//! Lifelong-learning metrics, meta-key diagnostics and detection scores.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::keyspace::{nearest_k, Detection, MetaKeyPool};
use crate::memory::MemoryBuffer;
use crate::vectorspace::cosine_distance;
use crate::{Error, Result};

/// `R[i][j]`: score (0..=100) on task `j` after learning seen task `i`.
/// Columns are the `N` seen tasks followed by the `N'` unseen tasks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerformanceMatrix {
    seen: usize,
    unseen: usize,
    rows: Vec<Option<Vec<f64>>>,
}

impl PerformanceMatrix {
    pub fn new(seen: usize, unseen: usize) -> Self {
        Self {
            seen,
            unseen,
            rows: vec![None; seen],
        }
    }

    /// Builds a complete matrix from rows.
    pub fn from_rows(seen: usize, unseen: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(seen, unseen);
        if rows.len() != seen {
            return Err(Error::DimensionMismatch {
                expected: seen,
                got: rows.len(),
            });
        }
        for (i, r) in rows.into_iter().enumerate() {
            m.set_row(i, r)?;
        }
        Ok(m)
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn unseen(&self) -> usize {
        self.unseen
    }

    pub fn set_row(&mut self, stage: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.seen + self.unseen {
            return Err(Error::DimensionMismatch {
                expected: self.seen + self.unseen,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !(0.0..=100.0).contains(v)) {
            return Err(Error::invalid("score", "scores must lie in [0, 100]"));
        }
        let slot = self
            .rows
            .get_mut(stage)
            .ok_or_else(|| Error::invalid("stage", "row index out of range"))?;
        *slot = Some(row);
        Ok(())
    }

    pub fn row(&self, stage: usize) -> Option<&[f64]> {
        self.rows.get(stage).and_then(|r| r.as_deref())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    fn require_row(&self, stage: usize) -> Result<&[f64]> {
        self.row(stage).ok_or(Error::IncompleteRow(stage))
    }
}

/// `(A_N, A_N')`: mean final score over seen tasks, and over unseen tasks
/// (`None` when there are none).
pub fn avg_performance(r: &PerformanceMatrix) -> Result<(f64, Option<f64>)> {
    if r.seen == 0 {
        return Err(Error::IncompleteRow(0));
    }
    let last = r.require_row(r.seen - 1)?;
    let (seen, unseen) = last.split_at(r.seen);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok((mean(seen), (!unseen.is_empty()).then(|| mean(unseen))))
}

/// `F_N = 1/(N-1) * sum_{j<N} max_{i<N} (R[i][j] - R[N][j])`, over the first
/// `N-1` seen tasks.
pub fn avg_forget(r: &PerformanceMatrix) -> Result<f64> {
    let n = r.seen;
    if n < 2 {
        return Err(Error::invalid("N", "forgetting needs at least two seen tasks"));
    }
    let last = r.require_row(n - 1)?;
    let earlier = (0..n - 1)
        .map(|i| r.require_row(i))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = (0..n - 1)
        .map(|j| {
            earlier
                .iter()
                .map(|row| row[j] - last[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / (n - 1) as f64)
}

/// Coverage of memory by meta keys: the size of the union of every key's `Z`
/// nearest memory entries, over `Z * M`.
pub fn diversity_metric(pool: &MetaKeyPool, buffer: &MemoryBuffer, z: usize) -> Result<f64> {
    let queries: Vec<&[f64]> = buffer.entries().iter().map(|e| e.query.as_slice()).collect();
    let keys: Vec<&[f64]> = pool.keys().iter().map(Vec::as_slice).collect();
    diversity(&keys, &queries, z)
}

pub(crate) fn diversity(keys: &[&[f64]], memory: &[&[f64]], z: usize) -> Result<f64> {
    if z == 0 || memory.len() < z {
        return Err(Error::NotEnoughEntries {
            have: memory.len(),
            need: z.max(1),
        });
    }
    let mut union = BTreeSet::new();
    for key in keys {
        union.extend(nearest_k(key, memory, z)?);
    }
    Ok(union.len() as f64 / (z * keys.len()) as f64)
}

/// Closeness of meta keys to memory queries: mean of `1 - d(q, k)` over the
/// `Z` nearest keys `k` of every memory query `q`. Not clamped; negative when
/// distances exceed 1.
pub fn locality_metric(pool: &MetaKeyPool, buffer: &MemoryBuffer, z: usize) -> Result<f64> {
    let queries: Vec<&[f64]> = buffer.entries().iter().map(|e| e.query.as_slice()).collect();
    let keys: Vec<&[f64]> = pool.keys().iter().map(Vec::as_slice).collect();
    locality(&keys, &queries, z)
}

pub(crate) fn locality(keys: &[&[f64]], memory: &[&[f64]], z: usize) -> Result<f64> {
    if z == 0 || keys.len() < z {
        return Err(Error::invalid("Z", "need 1 <= Z <= M"));
    }
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let mut total = 0.0;
    for q in memory {
        for k in nearest_k(q, keys, z)? {
            total += 1.0 - cosine_distance(q, keys[k])?;
        }
    }
    Ok(total / (z * memory.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionScores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionReport {
    pub overall: DetectionScores,
    /// Samples whose truth is a seen task.
    pub seen: Option<DetectionScores>,
    /// Samples whose truth is unseen.
    pub unseen: Option<DetectionScores>,
}

/// Scores `(predicted, truth)` pairs. Macro-F1 averages over every label that
/// occurs as a truth or a prediction in the scored subset.
pub fn detection_report(pairs: &[(Detection, Detection)]) -> Result<DetectionReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("predictions", "nothing to score"));
    }
    let seen: Vec<_> = pairs
        .iter()
        .copied()
        .filter(|(_, t)| *t != Detection::Unseen)
        .collect();
    let unseen: Vec<_> = pairs
        .iter()
        .copied()
        .filter(|(_, t)| *t == Detection::Unseen)
        .collect();
    Ok(DetectionReport {
        overall: score(pairs),
        seen: (!seen.is_empty()).then(|| score(&seen)),
        unseen: (!unseen.is_empty()).then(|| score(&unseen)),
    })
}

fn score(pairs: &[(Detection, Detection)]) -> DetectionScores {
    let correct = pairs.iter().filter(|(p, t)| p == t).count();
    let labels: BTreeSet<Detection> = pairs.iter().flat_map(|&(p, t)| [p, t]).collect();
    let f1_sum: f64 = labels
        .iter()
        .map(|&label| {
            let tp = pairs.iter().filter(|&&(p, t)| p == label && t == label).count() as f64;
            let predicted = pairs.iter().filter(|&&(p, _)| p == label).count() as f64;
            let actual = pairs.iter().filter(|&&(_, t)| t == label).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (predicted + actual)
            }
        })
        .sum();
    DetectionScores {
        accuracy: correct as f64 / pairs.len() as f64,
        macro_f1: f1_sum / labels.len() as f64,
        count: pairs.len(),
    }
}
