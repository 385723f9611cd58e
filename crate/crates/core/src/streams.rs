//! Synthetic task streams: Gaussian mixtures arranged in a format hierarchy.
//!
//! Every format owns a center and one offset per class. A task of that format
//! shifts the center by a task-level offset and jitters each class offset, so
//! tasks sharing a format sit closer together than tasks of different formats
//! and share their class layout. Unseen tasks reuse the format geometry with
//! fresh shifts and only have a test split.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::linalg::{norm, sq_dist};
use crate::vectorspace::SampleRecord;
use crate::{Error, Result};

/// Seed of [`standard_stream`].
pub const STANDARD_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StreamConfig {
    /// Seen tasks `N`.
    pub seen_tasks: usize,
    /// Unseen (test-only) tasks `N'`.
    pub unseen_tasks: usize,
    /// Formats `L`.
    pub formats: usize,
    /// Classes per task `K`.
    pub classes: usize,
    /// Feature dimension `d_x`.
    pub input_dim: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    /// Norm of each format center; larger means formats are further apart.
    pub format_scale: f64,
    /// Norm of the task-level shift; larger means tasks of one format are
    /// further apart.
    pub task_shift: f64,
    /// Norm of each format-level class offset.
    pub class_spread: f64,
    /// Norm of the per-task jitter on each class offset.
    pub class_jitter: f64,
    /// Minimum distance between class prototypes within a task.
    pub min_class_distance: f64,
    /// Per-coordinate standard deviation of sample noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seen_tasks: 5,
            unseen_tasks: 3,
            formats: 3,
            classes: 4,
            input_dim: 16,
            train_per_task: 500,
            test_per_task: 200,
            format_scale: 7.0,
            task_shift: 5.0,
            class_spread: 1.5,
            class_jitter: 0.3,
            min_class_distance: 1.5,
            noise: 0.6,
            seed: STANDARD_SEED,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let infeasible = |what: &str| Err(Error::InfeasibleStream(what.into()));
        if self.seen_tasks == 0 {
            return infeasible("seen_tasks must be >= 1");
        }
        if self.formats == 0 || self.formats > self.seen_tasks {
            return infeasible("formats must satisfy 1 <= L <= N");
        }
        if self.classes == 0 || self.input_dim == 0 {
            return infeasible("classes and input_dim must be >= 1");
        }
        if self.train_per_task == 0 || self.test_per_task == 0 {
            return infeasible("train_per_task and test_per_task must be >= 1");
        }
        if !(self.noise > 0.0) {
            return infeasible("noise must be > 0");
        }
        for (name, v) in [
            ("format_scale", self.format_scale),
            ("task_shift", self.task_shift),
            ("class_spread", self.class_spread),
            ("class_jitter", self.class_jitter),
            ("min_class_distance", self.min_class_distance),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InfeasibleStream(format!("{name} must be finite and >= 0")));
            }
        }
        if self.classes > 1
            && self.min_class_distance > 2.0 * (self.class_spread + self.class_jitter)
        {
            return infeasible(
                "min_class_distance exceeds 2 * (class_spread + class_jitter); prototypes cannot be that far apart",
            );
        }
        Ok(())
    }

    pub fn total_tasks(&self) -> usize {
        self.seen_tasks + self.unseen_tasks
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskSpec {
    /// Seen tasks are `0..N`, unseen tasks `N..N+N'`.
    pub task_id: usize,
    pub format_id: usize,
    /// One prototype per class.
    pub prototypes: Vec<Vec<f64>>,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskData {
    pub spec: TaskSpec,
    /// Records carry `task_id`. Empty for unseen tasks.
    pub train: Vec<SampleRecord>,
    /// Records never carry `task_id`.
    pub test: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stream {
    pub config: StreamConfig,
    pub seen: Vec<TaskData>,
    pub unseen: Vec<TaskData>,
}

impl Stream {
    /// Seen then unseen tasks, matching performance-matrix column order.
    pub fn all_tasks(&self) -> impl Iterator<Item = &TaskData> {
        self.seen.iter().chain(&self.unseen)
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn formats(&self) -> usize {
        self.config.formats
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }
}

fn random_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn scaled<R: Rng>(dim: usize, length: f64, rng: &mut R) -> Vec<f64> {
    random_direction(dim, rng)
        .into_iter()
        .map(|x| x * length)
        .collect()
}

fn add(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = parts[0].to_vec();
    for p in &parts[1..] {
        for (o, x) in out.iter_mut().zip(p.iter()) {
            *o += x;
        }
    }
    out
}

struct FormatGeometry {
    center: Vec<f64>,
    class_offsets: Vec<Vec<f64>>,
}

const MAX_ATTEMPTS: usize = 1000;

fn task_prototypes<R: Rng>(
    geometry: &FormatGeometry,
    config: &StreamConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let dim = config.input_dim;
    let min_sq = config.min_class_distance * config.min_class_distance;
    let shift = scaled(dim, config.task_shift, rng);
    for _ in 0..MAX_ATTEMPTS {
        let protos: Vec<Vec<f64>> = geometry
            .class_offsets
            .iter()
            .map(|offset| {
                let jitter = scaled(dim, config.class_jitter, rng);
                add(&[&geometry.center, &shift, offset, &jitter])
            })
            .collect();
        let separated = protos.iter().enumerate().all(|(i, a)| {
            protos[i + 1..]
                .iter()
                .all(|b| sq_dist(a, b) >= min_sq && sq_dist(a, b) > 0.0)
        });
        if separated {
            return Ok(protos);
        }
    }
    Err(Error::InfeasibleStream(format!(
        "could not place class prototypes at least min_class_distance = {} apart",
        config.min_class_distance
    )))
}

fn draw_split<R: Rng>(
    spec: &TaskSpec,
    size: usize,
    with_task_id: bool,
    rng: &mut R,
) -> Result<Vec<SampleRecord>> {
    let normal = Normal::new(0.0, spec.noise)
        .map_err(|_| Error::InfeasibleStream("noise must be finite".into()))?;
    let classes = spec.prototypes.len();
    // balanced labels, shuffled
    let mut labels: Vec<usize> = (0..size).map(|i| i % classes).collect();
    labels.shuffle(rng);
    Ok(labels
        .into_iter()
        .map(|label| SampleRecord {
            features: spec.prototypes[label]
                .iter()
                .map(|p| p + normal.sample(rng))
                .collect(),
            label,
            task_id: with_task_id.then_some(spec.task_id),
            format_id: spec.format_id,
        })
        .collect())
}

/// Generates `N` seen and `N'` unseen tasks; a pure function of `config`.
///
/// Seen task `t` has format `t mod L`, unseen task `u` has format `u mod L`.
pub fn generate_stream(config: &StreamConfig) -> Result<Stream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.input_dim;

    let mut formats = Vec::with_capacity(config.formats);
    for _ in 0..config.formats {
        let center = scaled(dim, config.format_scale, &mut rng);
        let class_offsets = (0..config.classes)
            .map(|_| scaled(dim, config.class_spread, &mut rng))
            .collect();
        formats.push(FormatGeometry {
            center,
            class_offsets,
        });
    }

    let mut build = |task_id: usize, format_id: usize, train_size: usize| -> Result<TaskData> {
        let prototypes = task_prototypes(&formats[format_id], config, &mut rng)?;
        let spec = TaskSpec {
            task_id,
            format_id,
            prototypes,
            noise: config.noise,
            train_size,
            test_size: config.test_per_task,
        };
        let train = draw_split(&spec, train_size, true, &mut rng)?;
        let test = draw_split(&spec, config.test_per_task, false, &mut rng)?;
        Ok(TaskData { spec, train, test })
    };

    let seen = (0..config.seen_tasks)
        .map(|t| build(t, t % config.formats, config.train_per_task))
        .collect::<Result<Vec<_>>>()?;
    let unseen = (0..config.unseen_tasks)
        .map(|u| build(config.seen_tasks + u, u % config.formats, 0))
        .collect::<Result<Vec<_>>>()?;

    Ok(Stream {
        config: config.clone(),
        seen,
        unseen,
    })
}

/// Five seen tasks, three unseen tasks, three formats, four classes,
/// sixteen features, 500/200 samples per task, seed [`STANDARD_SEED`].
pub fn standard_stream() -> Stream {
    generate_stream(&StreamConfig::default()).expect("default stream configuration is feasible")
}
