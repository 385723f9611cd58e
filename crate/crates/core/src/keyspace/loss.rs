//! Metric-learning losses over prompt keys, with analytic gradients.
//!
//! Query vectors and centroids are frozen inputs; gradients are returned only
//! for the key parameters.

use alloc::vec;
use alloc::vec::Vec;

use super::{Margins, MetaKeyPool};
use crate::vectorspace::{cosine_distance, cosine_distance_grad};
use crate::Result;

/// Loss and gradient for a single task key.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub positive_distance: f64,
    pub negative_distance: Option<f64>,
}

/// Loss and per-key gradients for a selected subset of meta keys.
/// `grads[i]` belongs to `selected[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLoss {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Which terms of the meta pull/push loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetaTerms {
    pub pull: bool,
    pub push: bool,
}

impl MetaTerms {
    pub const BOTH: Self = Self {
        pull: true,
        push: true,
    };
}

impl Default for MetaTerms {
    fn default() -> Self {
        Self::BOTH
    }
}

/// Exponential angular triplet loss
/// `exp(d(q, k) + max(1 - d(neg, k), 0))`.
///
/// Without a negative the hinge term is zero.
pub fn task_triplet_loss(q: &[f64], key: &[f64], negative: Option<&[f64]>) -> Result<KeyLoss> {
    let mut grad_pos = vec![0.0; key.len()];
    let positive_distance = cosine_distance_grad(key, q, 1.0, &mut grad_pos)?;

    let mut grad_neg = vec![0.0; key.len()];
    let mut hinge = 0.0;
    let negative_distance = match negative {
        Some(n) => {
            let d = cosine_distance_grad(key, n, 1.0, &mut grad_neg)?;
            if d < 1.0 {
                hinge = 1.0 - d;
            } else {
                grad_neg.iter_mut().for_each(|g| *g = 0.0);
            }
            Some(d)
        }
        None => None,
    };

    let loss = libm::exp(positive_distance + hinge);
    let grad = grad_pos
        .iter()
        .zip(&grad_neg)
        .map(|(p, n)| loss * (p - n))
        .collect();
    Ok(KeyLoss {
        loss,
        grad,
        positive_distance,
        negative_distance,
    })
}

/// Pull the selected meta keys towards `q` (locality) and push them apart
/// from each other (diversity):
///
/// `sum_i max(0, d(k_i, q) - eta) + sum_{i != j} max(0, gamma - d(k_i, k_j)) / M'^2`
///
/// The pair sum runs over ordered pairs.
pub fn meta_pull_push_loss(
    q: &[f64],
    pool: &MetaKeyPool,
    selected: &[usize],
    margins: Margins,
    terms: MetaTerms,
) -> Result<MetaLoss> {
    let dim = q.len();
    let m = selected.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; dim]; selected.len()];

    if terms.pull {
        for (slot, &i) in selected.iter().enumerate() {
            let key = pool.key(i);
            let d = cosine_distance(key, q)?;
            if d > margins.eta {
                loss += d - margins.eta;
                cosine_distance_grad(key, q, 1.0, &mut grads[slot])?;
            }
        }
    }

    if terms.push && selected.len() > 1 {
        let weight = 1.0 / (m * m);
        for (a, &i) in selected.iter().enumerate() {
            for (b, &j) in selected.iter().enumerate() {
                if a == b {
                    continue;
                }
                let (ki, kj) = (pool.key(i), pool.key(j));
                let d = cosine_distance(ki, kj)?;
                if d < margins.gamma {
                    loss += (margins.gamma - d) * weight;
                    // the ordered pair (a, b) depends on both keys
                    cosine_distance_grad(ki, kj, -weight, &mut grads[a])?;
                    cosine_distance_grad(kj, ki, -weight, &mut grads[b])?;
                }
            }
        }
    }

    Ok(MetaLoss { loss, grads })
}

/// Pull the selected meta keys towards a memory cluster centroid:
/// `sum_i max(0, d(k_i, c) - eta)`.
pub fn meta_centroid_loss(
    centroid: &[f64],
    pool: &MetaKeyPool,
    selected: &[usize],
    eta: f64,
) -> Result<MetaLoss> {
    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; centroid.len()]; selected.len()];
    for (slot, &i) in selected.iter().enumerate() {
        let key = pool.key(i);
        let d = cosine_distance(key, centroid)?;
        if d > eta {
            loss += d - eta;
            cosine_distance_grad(key, centroid, 1.0, &mut grads[slot])?;
        }
    }
    Ok(MetaLoss { loss, grads })
}
