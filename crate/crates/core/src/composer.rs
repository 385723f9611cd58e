//! Hierarchical prompt composition.
//!
//! A composed prompt is the flat concatenation
//! `[general | format | task-or-unseen | M' meta prompts]`. During training the
//! task slot comes from the gold task id, the nearest task key, or (with a
//! small probability) the format's unseen-task prompt; at inference it comes
//! from open-set detection.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::keyspace::{detect_task, nearest_task, top_m_prime, BoundaryMode, Detection, MetaKeyPool, TaskKey};
use crate::vectorspace::SampleRecord;
use crate::{Error, Result};

/// Parameter counts per prompt slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PromptLayout {
    pub general: usize,
    pub format: usize,
    pub task: usize,
    pub meta: usize,
}

impl Default for PromptLayout {
    /// 20/40/40/20 tokens scaled down by ten.
    fn default() -> Self {
        Self {
            general: 2,
            format: 4,
            task: 4,
            meta: 2,
        }
    }
}

impl PromptLayout {
    pub fn composed_len(&self, meta_select: usize) -> usize {
        self.general + self.format + self.task + meta_select * self.meta
    }
}

/// Addresses one trainable prompt vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PromptSlot {
    General,
    Format(usize),
    Task(usize),
    /// Unseen-task prompt of a format.
    Unseen(usize),
    Meta(usize),
}

/// Which prompt segments take part in composition. A disabled segment is
/// filled with zeros and never trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentMask {
    pub general: bool,
    pub format: bool,
    pub task: bool,
    pub meta: bool,
}

impl SegmentMask {
    pub const ALL: Self = Self {
        general: true,
        format: true,
        task: true,
        meta: true,
    };
    pub const NONE: Self = Self {
        general: false,
        format: false,
        task: false,
        meta: false,
    };
}

impl Default for SegmentMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptStore {
    layout: PromptLayout,
    general: Vec<f64>,
    format: Vec<Vec<f64>>,
    task: Vec<Vec<f64>>,
    unseen: Vec<Vec<f64>>,
    meta: Vec<Vec<f64>>,
}

impl PromptStore {
    /// All slots drawn i.i.d. from `N(0, init_scale^2)`.
    pub fn new<R: Rng + ?Sized>(
        layout: PromptLayout,
        formats: usize,
        tasks: usize,
        meta: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if formats == 0 {
            return Err(Error::invalid("formats", "need at least one format"));
        }
        let normal = Normal::new(0.0, init_scale)
            .map_err(|_| Error::invalid("init_scale", "must be finite and >= 0"))?;
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| normal.sample(rng)).collect() };
        let general = draw(layout.general);
        let format = (0..formats).map(|_| draw(layout.format)).collect();
        let task = (0..tasks).map(|_| draw(layout.task)).collect();
        let unseen = (0..formats).map(|_| draw(layout.task)).collect();
        let meta = (0..meta).map(|_| draw(layout.meta)).collect();
        Ok(Self {
            layout,
            general,
            format,
            task,
            unseen,
            meta,
        })
    }

    pub fn layout(&self) -> PromptLayout {
        self.layout
    }

    pub fn num_formats(&self) -> usize {
        self.format.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.task.len()
    }

    pub fn num_meta(&self) -> usize {
        self.meta.len()
    }

    pub fn slot(&self, slot: PromptSlot) -> Option<&[f64]> {
        match slot {
            PromptSlot::General => Some(&self.general),
            PromptSlot::Format(i) => self.format.get(i).map(Vec::as_slice),
            PromptSlot::Task(i) => self.task.get(i).map(Vec::as_slice),
            PromptSlot::Unseen(i) => self.unseen.get(i).map(Vec::as_slice),
            PromptSlot::Meta(i) => self.meta.get(i).map(Vec::as_slice),
        }
    }

    pub fn slot_mut(&mut self, slot: PromptSlot) -> Option<&mut [f64]> {
        match slot {
            PromptSlot::General => Some(&mut self.general),
            PromptSlot::Format(i) => self.format.get_mut(i).map(Vec::as_mut_slice),
            PromptSlot::Task(i) => self.task.get_mut(i).map(Vec::as_mut_slice),
            PromptSlot::Unseen(i) => self.unseen.get_mut(i).map(Vec::as_mut_slice),
            PromptSlot::Meta(i) => self.meta.get_mut(i).map(Vec::as_mut_slice),
        }
    }

    /// Every slot in a fixed order.
    pub fn slots(&self) -> Vec<PromptSlot> {
        let mut out = vec![PromptSlot::General];
        out.extend((0..self.format.len()).map(PromptSlot::Format));
        out.extend((0..self.task.len()).map(PromptSlot::Task));
        out.extend((0..self.unseen.len()).map(PromptSlot::Unseen));
        out.extend((0..self.meta.len()).map(PromptSlot::Meta));
        out
    }
}

/// Where the task segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum Route {
    Gold,
    Inferred,
    Unseen,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoutingRecord {
    /// `Task(id)` or `Unseen(format)`.
    pub task_slot: PromptSlot,
    /// Selected meta keys, ascending.
    pub meta: Vec<usize>,
    pub route: Route,
}

/// One contiguous piece of a composed prompt. `slot` is `None` for a
/// disabled (zero-filled) segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub slot: Option<PromptSlot>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedPrompt {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
    pub routing: RoutingRecord,
}

impl ComposedPrompt {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slots whose parameters appear in this prompt.
    pub fn active_slots(&self) -> impl Iterator<Item = (PromptSlot, core::ops::Range<usize>)> + '_ {
        self.segments
            .iter()
            .filter_map(|s| s.slot.map(|slot| (slot, s.offset..s.offset + s.len)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScheduleParams {
    pub alpha: f64,
    pub beta: f64,
    /// Probability of training on the format's unseen-task prompt.
    pub omega: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3e-4,
            omega: 0.05,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 1]"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::invalid("omega", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Gold-identity probability at step `k`: `max(0, alpha - k * beta)`.
///
/// Results within a few ulps of zero are reported as exactly zero, so the
/// schedule reaches 0 at `k = alpha / beta` despite `beta` not being exactly
/// representable.
pub fn epsilon_schedule(k: u64, params: &ScheduleParams) -> f64 {
    let eps = params.alpha - k as f64 * params.beta;
    if eps <= 4.0 * f64::EPSILON * params.alpha {
        0.0
    } else {
        eps
    }
}

/// How training picks the task identity once the unseen coin has failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdentityPolicy {
    #[default]
    Scheduled,
    /// Always the gold task id.
    GoldOnly,
    /// Always the nearest task key.
    InferredOnly,
}

/// Independent random streams for the unseen coin and the schedule coin.
pub struct RouteCoins<'a, R: Rng + ?Sized> {
    pub unseen: &'a mut R,
    pub schedule: &'a mut R,
}

/// Composes the training prompt of `sample` (query `q`) at step `k`.
///
/// `keys` must hold only the tasks learned so far (including the current
/// one). With `zeta < omega` the format's unseen prompt is used; otherwise
/// the gold task with probability `epsilon_k`, else the nearest task key.
#[allow(clippy::too_many_arguments)]
pub fn compose_train<R: Rng + ?Sized>(
    sample: &SampleRecord,
    q: &[f64],
    store: &PromptStore,
    keys: &[TaskKey],
    pool: &MetaKeyPool,
    step: u64,
    params: &ScheduleParams,
    policy: IdentityPolicy,
    mask: SegmentMask,
    coins: RouteCoins<'_, R>,
) -> Result<ComposedPrompt> {
    let gold = sample.task_id.ok_or(Error::MissingTaskId)?;
    let zeta: f64 = coins.unseen.random();
    let eps: f64 = coins.schedule.random();

    let (task_slot, route) = if zeta < params.omega {
        (PromptSlot::Unseen(sample.format_id), Route::Unseen)
    } else {
        let use_gold = match policy {
            IdentityPolicy::Scheduled => eps < epsilon_schedule(step, params),
            IdentityPolicy::GoldOnly => true,
            IdentityPolicy::InferredOnly => false,
        };
        match (use_gold, nearest_task(q, keys)?) {
            (false, Some(t)) => (PromptSlot::Task(t), Route::Inferred),
            _ => (PromptSlot::Task(gold), Route::Gold),
        }
    };
    let meta = top_m_prime(q, pool)?;
    assemble(store, sample.format_id, task_slot, meta, route, mask)
}

/// Composes the inference prompt from the query and the observable format
/// only; open-set detection picks the task slot.
pub fn compose_infer(
    format_id: usize,
    q: &[f64],
    store: &PromptStore,
    keys: &[TaskKey],
    pool: &MetaKeyPool,
    boundary: BoundaryMode,
    mask: SegmentMask,
) -> Result<ComposedPrompt> {
    let (task_slot, route) = match detect_task(q, keys, boundary)? {
        Detection::Task(t) => (PromptSlot::Task(t), Route::Inferred),
        Detection::Unseen => (PromptSlot::Unseen(format_id), Route::Unseen),
    };
    let meta = top_m_prime(q, pool)?;
    assemble(store, format_id, task_slot, meta, route, mask)
}

fn assemble(
    store: &PromptStore,
    format_id: usize,
    task_slot: PromptSlot,
    meta: Vec<usize>,
    route: Route,
    mask: SegmentMask,
) -> Result<ComposedPrompt> {
    let layout = store.layout;
    let mut pieces: Vec<(Option<PromptSlot>, usize)> = vec![
        (mask.general.then_some(PromptSlot::General), layout.general),
        (mask.format.then_some(PromptSlot::Format(format_id)), layout.format),
        (mask.task.then_some(task_slot), layout.task),
    ];
    pieces.extend(
        meta.iter()
            .map(|&m| (mask.meta.then_some(PromptSlot::Meta(m)), layout.meta)),
    );

    let total = layout.composed_len(meta.len());
    let mut values = Vec::with_capacity(total);
    let mut segments = Vec::with_capacity(pieces.len());
    for (slot, len) in pieces {
        let offset = values.len();
        match slot {
            Some(s) => {
                let v = store
                    .slot(s)
                    .ok_or_else(|| Error::invalid("prompt slot", "index out of range"))?;
                values.extend_from_slice(v);
            }
            None => values.extend(core::iter::repeat_n(0.0, len)),
        }
        segments.push(Segment { slot, offset, len });
    }
    Ok(ComposedPrompt {
        values,
        segments,
        routing: RoutingRecord {
            task_slot,
            meta,
            route,
        },
    })
}
