//! Frozen query encoding and the cosine distance shared by every module.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{all_finite, dot, norm};
use crate::{Error, Result};

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// One observation of a task: features, class label, optional task id and
/// the (always observable) format id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleRecord {
    pub features: Vec<f64>,
    pub label: usize,
    /// Absent on test splits.
    pub task_id: Option<usize>,
    pub format_id: usize,
}

impl SampleRecord {
    pub fn validate(&self, num_classes: usize, num_formats: usize) -> Result<()> {
        if !all_finite(&self.features) {
            return Err(Error::invalid("features", "non-finite value"));
        }
        if self.label >= num_classes {
            return Err(Error::invalid("label", "label out of range"));
        }
        if self.format_id >= num_formats {
            return Err(Error::invalid("format_id", "format out of range"));
        }
        Ok(())
    }
}

/// Unit-norm embedding of a sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryVector(Vec<f64>);

impl QueryVector {
    /// Normalizes `values`; rejects vectors without a direction.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::Degenerate("non-finite query"));
        }
        let n = norm(&values);
        if n < MIN_NORM {
            return Err(Error::Degenerate("query projects to the zero vector"));
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for QueryVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Seeded random linear projection `d_x -> d_q` followed by normalization.
///
/// The projection is drawn once at construction and never changes, so the
/// encoder is a pure function of `(sample, seed)`.
///
/// Serialized as its dimensions and seed; the projection is redrawn on load.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "EncoderSpec", into = "EncoderSpec")
)]
pub struct QueryEncoder {
    input_dim: usize,
    query_dim: usize,
    seed: u64,
    // row-major, query_dim x input_dim
    projection: Vec<f64>,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSpec {
    input_dim: usize,
    query_dim: usize,
    seed: u64,
}

#[cfg(feature = "serde")]
impl From<QueryEncoder> for EncoderSpec {
    fn from(e: QueryEncoder) -> Self {
        Self {
            input_dim: e.input_dim,
            query_dim: e.query_dim,
            seed: e.seed,
        }
    }
}

#[cfg(feature = "serde")]
impl TryFrom<EncoderSpec> for QueryEncoder {
    type Error = Error;

    fn try_from(s: EncoderSpec) -> Result<Self> {
        Self::new(s.input_dim, s.query_dim, s.seed)
    }
}

impl QueryEncoder {
    pub fn new(input_dim: usize, query_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || query_dim == 0 {
            return Err(Error::invalid("encoder", "dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / libm::sqrt(query_dim as f64);
        let projection = (0..input_dim * query_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self {
            input_dim,
            query_dim,
            seed,
            projection,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encode_features(&self, features: &[f64]) -> Result<QueryVector> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        if !all_finite(features) {
            return Err(Error::Degenerate("non-finite features"));
        }
        let projected = self
            .projection
            .chunks_exact(self.input_dim)
            .map(|row| dot(row, features))
            .collect();
        QueryVector::new(projected)
    }

    pub fn encode(&self, sample: &SampleRecord) -> Result<QueryVector> {
        self.encode_features(&sample.features)
    }
}

/// `encode_query(sample, seed)`: builds the seed's encoder and applies it.
///
/// Prefer holding a [`QueryEncoder`] when encoding many samples.
pub fn encode_query(
    sample: &SampleRecord,
    query_dim: usize,
    encoder_seed: u64,
) -> Result<QueryVector> {
    QueryEncoder::new(sample.features.len(), query_dim, encoder_seed)?.encode(sample)
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::ZeroVector);
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Distance and its gradient with respect to `a`, accumulated into `grad`
/// with weight `scale`.
///
/// `d/da (1 - a.b / (|a||b|)) = -(b_hat - cos * a_hat) / |a|`
pub(crate) fn cosine_distance_grad(
    a: &[f64],
    b: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::ZeroVector);
    }
    let cos = dot(a, b) / (na * nb);
    for ((g, ai), bi) in grad.iter_mut().zip(a).zip(b) {
        *g -= scale * (bi / nb - cos * ai / na) / na;
    }
    Ok(1.0 - cos.clamp(-1.0, 1.0))
}
