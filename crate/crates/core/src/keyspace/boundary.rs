//! Adaptive decision boundaries and open-set task detection.
//!
//! Each task gets a scalar radius `delta` around its key, learned by gradient
//! descent on the balanced hinge
//! `mean[ 1(d > delta) (d - delta) + 1(d <= delta) (delta - d) ]`
//! over that task's training queries. Keys are frozen while boundaries train.

use alloc::vec::Vec;

use super::{TaskKey, FIXED_BOUNDARY};
use crate::linalg::argmin_by;
use crate::vectorspace::{cosine_distance, QueryVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdbConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Starting radius for tasks without a boundary yet.
    pub init: f64,
}

impl Default for AdbConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            epochs: 200,
            init: 0.0,
        }
    }
}

/// How [`detect_task`] decides whether a query is inside a task's region.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BoundaryMode {
    /// Learned per-task radius.
    Adaptive,
    /// Same radius for every task.
    Fixed(f64),
}

impl BoundaryMode {
    pub const FIXED_DEFAULT: Self = Self::Fixed(FIXED_BOUNDARY);

    fn radius(self, key: &TaskKey) -> f64 {
        match self {
            Self::Adaptive => key.radius(),
            Self::Fixed(r) => r,
        }
    }
}

/// Outcome of open-set detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Detection {
    Task(usize),
    Unseen,
}

/// Balanced boundary loss and its derivative in `delta`.
pub fn boundary_loss(distances: &[f64], delta: f64) -> (f64, f64) {
    if distances.is_empty() {
        return (0.0, 0.0);
    }
    let (mut loss, mut grad) = (0.0, 0.0);
    for &d in distances {
        if d > delta {
            loss += d - delta;
            grad -= 1.0;
        } else {
            loss += delta - d;
            grad += 1.0;
        }
    }
    let n = distances.len() as f64;
    (loss / n, grad / n)
}

/// Gradient descent on one radius; clamped to `>= 0` after every step.
pub fn fit_boundary(distances: &[f64], start: f64, lr: f64, epochs: usize) -> f64 {
    if distances.is_empty() {
        return FIXED_BOUNDARY;
    }
    let mut delta = start;
    for _ in 0..epochs {
        let (_, grad) = boundary_loss(distances, delta);
        delta = (delta - lr * grad).max(0.0);
    }
    delta
}

/// Learns a boundary for each key from `queries[i]`, the training queries of
/// `keys[i]`. Tasks with no queries fall back to the fixed boundary.
pub fn train_adb(keys: &mut [TaskKey], queries: &[Vec<QueryVector>], config: AdbConfig) -> Result<()> {
    if keys.len() != queries.len() {
        return Err(Error::DimensionMismatch {
            expected: keys.len(),
            got: queries.len(),
        });
    }
    for (key, qs) in keys.iter_mut().zip(queries) {
        let qs: Vec<&[f64]> = qs.iter().map(QueryVector::as_slice).collect();
        fit_boundary_from(key, &qs, config)?;
    }
    Ok(())
}

/// Learns the boundary of one key from its queries, starting from the
/// current boundary if there is one.
pub fn fit_boundary_from(key: &mut TaskKey, queries: &[&[f64]], config: AdbConfig) -> Result<()> {
    let distances = queries
        .iter()
        .map(|q| cosine_distance(q, &key.key))
        .collect::<Result<Vec<_>>>()?;
    let start = key.boundary.unwrap_or(config.init);
    key.boundary = Some(fit_boundary(&distances, start, config.lr, config.epochs));
    Ok(())
}

/// Nearest task among those whose region contains `q`, or
/// [`Detection::Unseen`] when `q` lies outside every region.
pub fn detect_task(q: &[f64], keys: &[TaskKey], mode: BoundaryMode) -> Result<Detection> {
    let mut inside = Vec::with_capacity(keys.len());
    for key in keys {
        let d = cosine_distance(q, &key.key)?;
        inside.push(if d <= mode.radius(key) { d } else { f64::INFINITY });
    }
    Ok(match argmin_by(inside.iter().copied()) {
        Some(i) if inside[i].is_finite() => Detection::Task(keys[i].task_id),
        _ => Detection::Unseen,
    })
}
