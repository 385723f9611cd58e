//! Sequential training over a task stream.
//!
//! Per task: cluster the memory queries, run shuffled mini-batches over the
//! current training set plus the memory buffer, fit the detection boundaries,
//! add the task's samples to memory, then score every test set.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{argmax, SurrogateModel};
use super::optim::{Optimizer, OptimizerKind, ParamId};
use super::variant::{Method, Variant};
use crate::composer::{
    compose_infer, compose_train, epsilon_schedule, PromptLayout, PromptSlot, PromptStore, Route,
    RouteCoins, RoutingRecord, ScheduleParams,
};
use crate::keyspace::{
    fit_boundary_from, meta_centroid_loss, meta_pull_push_loss, task_triplet_loss, AdbConfig,
    BoundaryMode, Detection, Margins, MetaKeyPool, TaskKey,
};
use crate::memory::{centroid_of, cluster_memory, CentroidSet, MemoryBuffer, Selection};
use crate::metrics::{
    detection_report, diversity_metric, locality_metric, DetectionReport, PerformanceMatrix,
};
use crate::streams::Stream;
use crate::vectorspace::{cosine_distance, QueryEncoder, QueryVector, SampleRecord};
use crate::{Error, Result};

/// Neighbourhood sizes reported by the key-space diagnostics.
pub const DIAGNOSTIC_Z: [usize; 4] = [2, 3, 5, 10];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    /// Learning rate of the task keys.
    pub lr_keys: f64,
    /// Learning rate of the meta keys.
    pub lr_meta_keys: f64,
    pub adb: AdbConfig,
    /// Memory samples kept per task (`E`).
    pub memory_per_task: usize,
    /// Meta key pool size (`M`).
    pub meta_pool: usize,
    /// Meta keys selected per query (`M'`).
    pub meta_select: usize,
    pub margins: Margins,
    pub schedule: ScheduleParams,
    pub optimizer: OptimizerKind,
    pub layout: PromptLayout,
    pub query_dim: usize,
    /// Standard deviation of the initial prompt values.
    pub prompt_init: f64,
    /// Standard deviation of the initial prompt-conditioning weights.
    pub prompt_weight_init: f64,
    /// k-means clusters per learned task.
    pub clusters_per_task: usize,
    pub seed: u64,
    /// Seed of the frozen query encoder; the run seed when absent.
    pub encoder_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            lr_model: 0.05,
            lr_keys: 0.01,
            lr_meta_keys: 0.05,
            adb: AdbConfig::default(),
            memory_per_task: 50,
            meta_pool: 30,
            meta_select: 5,
            margins: Margins::default(),
            schedule: ScheduleParams::default(),
            optimizer: OptimizerKind::Sgd,
            layout: PromptLayout::default(),
            query_dim: 32,
            prompt_init: 0.5,
            prompt_weight_init: 0.01,
            clusters_per_task: 5,
            seed: 42,
            encoder_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("memory_per_task", self.memory_per_task),
            ("meta_pool", self.meta_pool),
            ("meta_select", self.meta_select),
            ("query_dim", self.query_dim),
            ("clusters_per_task", self.clusters_per_task),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.meta_select > self.meta_pool {
            return Err(Error::invalid("meta_select", "need meta_select <= meta_pool"));
        }
        for (field, v) in [
            ("lr_model", self.lr_model),
            ("lr_keys", self.lr_keys),
            ("lr_meta_keys", self.lr_meta_keys),
            ("adb.lr", self.adb.lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be positive and finite"));
            }
        }
        for (field, v) in [("prompt_init", self.prompt_init), ("prompt_weight_init", self.prompt_weight_init)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be >= 0 and finite"));
            }
        }
        self.margins.validate()?;
        self.schedule.validate()
    }

    pub fn prompt_len(&self) -> usize {
        self.layout.composed_len(self.meta_select)
    }
}

/// Per-sample loss terms; absent terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParts {
    /// Meta key pull/push loss.
    pub meta: f64,
    /// Meta key centroid loss, memory samples only.
    pub meta_memory: f64,
    /// Task key triplet loss.
    pub task_key: f64,
    pub lm: f64,
}

impl LossParts {
    fn add(&mut self, other: &Self) {
        self.meta += other.meta;
        self.meta_memory += other.meta_memory;
        self.task_key += other.task_key;
        self.lm += other.lm;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.meta *= s;
        self.meta_memory *= s;
        self.task_key *= s;
        self.lm *= s;
        self
    }
}

pub fn total_loss(parts: &LossParts) -> f64 {
    parts.meta + parts.meta_memory + parts.task_key + parts.lm
}

/// A batch element: a training sample of the current task or a memory entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchItem {
    Current(usize),
    Memory(usize),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchTrace {
    pub stage: usize,
    pub epoch: usize,
    pub step: u64,
    pub size: usize,
    pub memory_samples: usize,
    pub epsilon: f64,
    /// Batch means.
    pub loss: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RouteEvent {
    pub phase: Phase,
    pub stage: usize,
    /// Global step for training events.
    pub step: Option<u64>,
    /// Task whose data the sample comes from.
    pub task: usize,
    pub index: usize,
    pub from_memory: bool,
    pub routing: RoutingRecord,
    pub label: usize,
    pub predicted: Option<usize>,
}

/// Receives progress events. Every method defaults to a no-op.
pub trait TrainObserver {
    /// Whether training-time routes should be reported (evaluation routes of
    /// the final stage always are).
    fn wants_train_routes(&self) -> bool {
        false
    }
    fn on_batch(&mut self, _trace: &BatchTrace) {}
    fn on_route(&mut self, _event: &RouteEvent) {}
    fn on_task_end(&mut self, _stage: usize, _row: &[f64]) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Everything needed for inference.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainedState {
    pub variant: Variant,
    pub encoder: QueryEncoder,
    pub store: PromptStore,
    /// Keys of the learned tasks; `keys[t].task_id == t`.
    pub keys: Vec<TaskKey>,
    pub pool: MetaKeyPool,
    pub model: SurrogateModel,
    pub memory: MemoryBuffer,
}

impl TrainedState {
    /// Inference-time prompt and routing for a sample. The task id, if any,
    /// is ignored.
    pub fn route(&self, sample: &SampleRecord, q: &[f64]) -> Result<(Vec<f64>, Option<RoutingRecord>)> {
        if !self.variant.uses_prompts() {
            return Ok((vec![0.0; self.model.prompt_len()], None));
        }
        let composed = compose_infer(
            sample.format_id,
            q,
            &self.store,
            &self.keys,
            &self.pool,
            self.variant.boundary_mode(),
            self.variant.segment_mask(),
        )?;
        Ok((composed.values, Some(composed.routing)))
    }

    pub fn forward(&self, sample: &SampleRecord) -> Result<Vec<f64>> {
        let q = self.encoder.encode(sample)?;
        let (prompt, _) = self.route(sample, q.as_slice())?;
        self.model.forward(&sample.features, &prompt)
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, sample: &SampleRecord) -> Result<usize> {
        Ok(argmax(&self.forward(sample)?))
    }
}

/// Diversity and locality of the meta keys over the final memory at one `Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeyDiagnostic {
    pub z: usize,
    pub diversity: f64,
    pub locality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub matrix: PerformanceMatrix,
    /// Final-stage task-identity detection; `None` for methods without keys.
    pub detection: Option<DetectionReport>,
    /// `(predicted, truth)` for every test sample at the final stage.
    pub detection_pairs: Vec<(Detection, Detection)>,
    pub diagnostics: Vec<KeyDiagnostic>,
    pub state: TrainedState,
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const UNSEEN_STREAM: u64 = 2;
const SCHEDULE_STREAM: u64 = 3;

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn derived_seed(seed: u64, salt: u64, task: usize) -> u64 {
    seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (task as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Gradient accumulators for one batch.
#[derive(Default)]
struct Grads {
    weights: Vec<f64>,
    prompt_weights: Vec<f64>,
    slots: BTreeMap<PromptSlot, Vec<f64>>,
    /// Sum of gradients and contributing sample count per task key.
    task_keys: BTreeMap<usize, (Vec<f64>, usize)>,
    meta_keys: BTreeMap<usize, Vec<f64>>,
}

fn accumulate(into: &mut Vec<f64>, grad: &[f64]) {
    if into.is_empty() {
        into.resize(grad.len(), 0.0);
    }
    into.iter_mut().zip(grad).for_each(|(a, g)| *a += g);
}

fn scale(grad: &[f64], s: f64) -> Vec<f64> {
    grad.iter().map(|g| g * s).collect()
}

/// Stateful trainer; [`train_stream`] drives it over a whole stream.
pub struct Trainer<'s> {
    stream: &'s Stream,
    config: TrainConfig,
    state: TrainedState,
    train_queries: Vec<Vec<QueryVector>>,
    test_queries: Vec<Vec<QueryVector>>,
    centroids: Option<CentroidSet>,
    optimizer: Optimizer,
    shuffle_rng: ChaCha8Rng,
    unseen_rng: ChaCha8Rng,
    schedule_rng: ChaCha8Rng,
    current: Option<usize>,
    step: u64,
    matrix: PerformanceMatrix,
}

impl<'s> Trainer<'s> {
    pub fn new(stream: &'s Stream, config: &TrainConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        variant.validate()?;
        if stream.seen.is_empty() {
            return Err(Error::invalid("tasks", "stream has no seen tasks"));
        }
        let (classes, formats) = (stream.classes(), stream.formats());
        for task in stream.all_tasks() {
            for s in task.train.iter().chain(&task.test) {
                s.validate(classes, formats)?;
            }
        }
        let encoder = QueryEncoder::new(
            stream.input_dim(),
            config.query_dim,
            config.encoder_seed.unwrap_or(config.seed),
        )?;
        let encode_all = |samples: &[SampleRecord]| -> Result<Vec<QueryVector>> {
            samples.iter().map(|s| encoder.encode(s)).collect()
        };
        let train_queries = stream
            .seen
            .iter()
            .map(|t| encode_all(&t.train))
            .collect::<Result<Vec<_>>>()
            .map_err(Error::at("encode queries"))?;
        let test_queries = stream
            .all_tasks()
            .map(|t| encode_all(&t.test))
            .collect::<Result<Vec<_>>>()
            .map_err(Error::at("encode queries"))?;

        let mut init = rng_stream(config.seed, INIT_STREAM);
        let store = PromptStore::new(
            config.layout,
            formats,
            stream.seen.len(),
            config.meta_pool,
            config.prompt_init,
            &mut init,
        )?;
        let pool = MetaKeyPool::random(config.meta_pool, config.meta_select, config.query_dim, &mut init)?;
        let model = SurrogateModel::init(
            classes,
            stream.input_dim(),
            config.prompt_len(),
            config.prompt_weight_init,
            &mut init,
        )?;

        Ok(Self {
            stream,
            state: TrainedState {
                variant,
                encoder,
                store,
                keys: Vec::new(),
                pool,
                model,
                memory: MemoryBuffer::new(config.memory_per_task),
            },
            config: config.clone(),
            train_queries,
            test_queries,
            centroids: None,
            optimizer: Optimizer::new(config.optimizer),
            shuffle_rng: rng_stream(config.seed, SHUFFLE_STREAM),
            unseen_rng: rng_stream(config.seed, UNSEEN_STREAM),
            schedule_rng: rng_stream(config.seed, SCHEDULE_STREAM),
            current: None,
            step: 0,
            matrix: PerformanceMatrix::new(stream.seen.len(), stream.unseen.len()),
        })
    }

    pub fn state(&self) -> &TrainedState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn matrix(&self) -> &PerformanceMatrix {
        &self.matrix
    }

    pub fn centroids(&self) -> Option<&CentroidSet> {
        self.centroids.as_ref()
    }

    pub fn current_task(&self) -> Option<usize> {
        self.current
    }

    /// Global step counter used by the sampling schedule.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Starts task `task` (tasks must be taken in order): clusters the memory
    /// and creates the task key from the mean query of its first
    /// `batch_size` training samples.
    pub fn begin_task(&mut self, task: usize) -> Result<()> {
        if task != self.state.keys.len() || task >= self.stream.seen.len() {
            return Err(Error::invalid("task", "tasks must be trained in stream order"));
        }
        if self.stream.seen[task].train.is_empty() {
            return Err(Error::invalid("task_samples", "seen task has no training data"));
        }
        let variant = self.state.variant;
        self.centroids = None;
        if variant.uses_centroid_loss() && !variant.ablations.no_cluster && !self.state.memory.is_empty() {
            let clusters = self.config.clusters_per_task * (task + 1);
            let seed = derived_seed(self.config.seed, 1, task);
            self.centroids = Some(
                cluster_memory(&self.state.memory, clusters, seed).map_err(Error::at("cluster memory"))?,
            );
        }

        let queries = &self.train_queries[task];
        let n = queries.len().min(self.config.batch_size);
        let mut mean = vec![0.0; self.config.query_dim];
        for q in &queries[..n] {
            accumulate(&mut mean, q.as_slice());
        }
        let key = QueryVector::new(mean)
            .map(QueryVector::into_inner)
            .map_err(Error::at("initialize task key"))?;
        self.state.keys.push(TaskKey::new(task, key)?);
        self.current = Some(task);
        Ok(())
    }

    /// One epoch of shuffled batches over the current task and the memory.
    pub fn epoch_batches(&mut self) -> Result<Vec<Vec<BatchItem>>> {
        let task = self.current.ok_or_else(|| Error::invalid("task", "no task in progress"))?;
        let mut items: Vec<BatchItem> = (0..self.stream.seen[task].train.len())
            .map(BatchItem::Current)
            .collect();
        if self.state.variant.uses_memory() {
            items.extend((0..self.state.memory.len()).map(BatchItem::Memory));
        }
        items.shuffle(&mut self.shuffle_rng);
        Ok(items.chunks(self.config.batch_size).map(<[_]>::to_vec).collect())
    }

    /// Task key negative for `key_task`: the memory entry from another task
    /// closest to the key.
    fn negative_for(&self, key_task: usize) -> Result<Option<Vec<f64>>> {
        if !self.state.variant.uses_negatives() {
            return Ok(None);
        }
        let key = &self.state.keys[key_task].key;
        let mut best: Option<(f64, usize)> = None;
        for (i, e) in self.state.memory.entries().iter().enumerate() {
            if e.source_task == key_task {
                continue;
            }
            let d = cosine_distance(e.query.as_slice(), key)?;
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, i));
            }
        }
        Ok(best.map(|(_, i)| self.state.memory.entries()[i].query.as_slice().to_vec()))
    }

    /// One optimisation step on `items`; gradients are batch means.
    pub fn train_batch(
        &mut self,
        items: &[BatchItem],
        epoch: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<BatchTrace> {
        let task = self.current.ok_or_else(|| Error::invalid("task", "no task in progress"))?;
        if items.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        let variant = self.state.variant;
        let prompts = variant.uses_prompts();
        let mask = variant.segment_mask();
        let policy = variant.identity_policy();
        let terms = variant.meta_terms();
        let log_routes = observer.wants_train_routes();

        let mut negatives: BTreeMap<usize, Option<Vec<f64>>> = BTreeMap::new();
        let mut grads = Grads::default();
        let mut sum = LossParts::default();
        let mut memory_samples = 0;

        for item in items {
            let (sample, query, memory_index) = match *item {
                BatchItem::Current(i) => {
                    let s = self.stream.seen[task]
                        .train
                        .get(i)
                        .ok_or_else(|| Error::invalid("batch", "sample index out of range"))?;
                    (s, &self.train_queries[task][i], None)
                }
                BatchItem::Memory(i) => {
                    let e = self.state.memory.entries().get(i).ok_or(Error::UnknownEntry(i))?;
                    memory_samples += 1;
                    (&e.sample, &e.query, Some(i))
                }
            };
            let q = query.as_slice();
            let mut parts = LossParts::default();

            let composed = if prompts {
                let c = compose_train(
                    sample,
                    q,
                    &self.state.store,
                    &self.state.keys,
                    &self.state.pool,
                    self.step,
                    &self.config.schedule,
                    policy,
                    mask,
                    RouteCoins {
                        unseen: &mut self.unseen_rng,
                        schedule: &mut self.schedule_rng,
                    },
                )
                .map_err(Error::at("compose prompt"))?;
                Some(c)
            } else {
                None
            };
            let zeros;
            let prompt: &[f64] = match &composed {
                Some(c) => &c.values,
                None => {
                    zeros = vec![0.0; self.state.model.prompt_len()];
                    &zeros
                }
            };

            let lm = self
                .state
                .model
                .lm_loss(&sample.features, sample.label, prompt)
                .map_err(Error::at("language-model loss"))?;
            parts.lm = lm.loss;
            accumulate(&mut grads.weights, &lm.grad_weights);
            if prompts {
                accumulate(&mut grads.prompt_weights, &lm.grad_prompt_weights);
            }

            if let Some(c) = &composed {
                for (slot, range) in c.active_slots() {
                    accumulate(grads.slots.entry(slot).or_default(), &lm.grad_prompt[range]);
                }

                let key_task = sample.task_id.ok_or(Error::MissingTaskId)?;
                if key_task >= self.state.keys.len() {
                    return Err(Error::invalid("task_id", "sample from a task without a key"));
                }
                if let alloc::collections::btree_map::Entry::Vacant(e) = negatives.entry(key_task) {
                    let n = self.negative_for(key_task).map_err(Error::at("select negative"))?;
                    e.insert(n);
                }
                let kl = task_triplet_loss(q, &self.state.keys[key_task].key, negatives[&key_task].as_deref())
                    .map_err(Error::at("task key loss"))?;
                parts.task_key = kl.loss;
                let entry = grads.task_keys.entry(key_task).or_default();
                accumulate(&mut entry.0, &kl.grad);
                entry.1 += 1;

                let selected = &c.routing.meta;
                let ml = meta_pull_push_loss(q, &self.state.pool, selected, self.config.margins, terms)
                    .map_err(Error::at("meta key loss"))?;
                parts.meta = ml.loss;
                for (&j, g) in selected.iter().zip(&ml.grads) {
                    accumulate(grads.meta_keys.entry(j).or_default(), g);
                }

                if let (Some(i), true) = (memory_index, variant.uses_centroid_loss()) {
                    let centroid: &[f64] = match &self.centroids {
                        Some(set) => centroid_of(i, set).map_err(Error::at("centroid loss"))?,
                        None => q,
                    };
                    let cl = meta_centroid_loss(centroid, &self.state.pool, selected, self.config.margins.eta)
                        .map_err(Error::at("centroid loss"))?;
                    parts.meta_memory = cl.loss;
                    for (&j, g) in selected.iter().zip(&cl.grads) {
                        accumulate(grads.meta_keys.entry(j).or_default(), g);
                    }
                }

                if log_routes {
                    let (source, index) = match *item {
                        BatchItem::Current(i) => (task, i),
                        BatchItem::Memory(i) => (self.state.memory.entries()[i].source_task, i),
                    };
                    observer.on_route(&RouteEvent {
                        phase: Phase::Train,
                        stage: task,
                        step: Some(self.step),
                        task: source,
                        index,
                        from_memory: memory_index.is_some(),
                        routing: c.routing.clone(),
                        label: sample.label,
                        predicted: None,
                    });
                }
            }
            sum.add(&parts);
        }

        self.apply(grads, items.len())?;

        let mean = sum.scaled(1.0 / items.len() as f64);
        let trace = BatchTrace {
            stage: task,
            epoch,
            step: self.step,
            size: items.len(),
            memory_samples,
            epsilon: epsilon_schedule(self.step, &self.config.schedule),
            loss: mean,
            total: total_loss(&mean),
        };
        self.step += 1;
        observer.on_batch(&trace);
        Ok(trace)
    }

    fn apply(&mut self, grads: Grads, batch: usize) -> Result<()> {
        let inv = 1.0 / batch as f64;
        let (lr_model, lr_keys, lr_meta) = (
            self.config.lr_model,
            self.config.lr_keys,
            self.config.lr_meta_keys,
        );
        let opt = &mut self.optimizer;
        let state = &mut self.state;

        opt.step(ParamId::Weights, state.model.weights_mut(), &scale(&grads.weights, inv), lr_model);
        if !grads.prompt_weights.is_empty() {
            opt.step(
                ParamId::PromptWeights,
                state.model.prompt_weights_mut(),
                &scale(&grads.prompt_weights, inv),
                lr_model,
            );
        }
        for (slot, g) in &grads.slots {
            let params = state
                .store
                .slot_mut(*slot)
                .ok_or_else(|| Error::invalid("prompt slot", "index out of range"))?;
            opt.step(ParamId::Prompt(*slot), params, &scale(g, inv), lr_model);
        }
        for (t, (g, count)) in &grads.task_keys {
            let g = scale(g, 1.0 / *count as f64);
            opt.step(ParamId::TaskKey(*t), &mut state.keys[*t].key, &g, lr_keys);
        }
        for (j, g) in &grads.meta_keys {
            opt.step(ParamId::MetaKey(*j), state.pool.key_mut(*j), &scale(g, inv), lr_meta);
        }
        let finite = crate::linalg::all_finite(state.model.weights())
            && crate::linalg::all_finite(state.model.prompt_weights())
            && state.keys.iter().all(|k| crate::linalg::all_finite(&k.key));
        if !finite {
            return Err(Error::at("parameter update")(Error::Degenerate(
                "non-finite parameters; lower the learning rate",
            )));
        }
        Ok(())
    }

    /// Fits detection boundaries and stores the finished task in memory.
    pub fn end_task(&mut self) -> Result<()> {
        let task = self.current.ok_or_else(|| Error::invalid("task", "no task in progress"))?;
        let variant = self.state.variant;
        if variant.uses_prompts() && variant.boundary_mode() == BoundaryMode::Adaptive {
            for t in 0..=task {
                let queries: Vec<&[f64]> = if t == task {
                    self.train_queries[t].iter().map(QueryVector::as_slice).collect()
                } else {
                    // earlier keys keep moving through their replayed samples
                    self.state
                        .memory
                        .entries()
                        .iter()
                        .filter(|e| e.source_task == t)
                        .map(|e| e.query.as_slice())
                        .collect()
                };
                if t != task && queries.is_empty() {
                    continue;
                }
                fit_boundary_from(&mut self.state.keys[t], &queries, self.config.adb)
                    .map_err(Error::at("boundary training"))?;
            }
        }

        if variant.uses_memory() {
            let selection = match variant.method {
                Method::Full => Selection::KeyDiverse,
                _ => Selection::Uniform {
                    seed: derived_seed(self.config.seed, 2, task),
                },
            };
            self.state
                .memory
                .update(
                    task,
                    &self.stream.seen[task].train,
                    &self.train_queries[task],
                    Some(&self.state.pool),
                    selection,
                )
                .map_err(Error::at("memory update"))?;
        }
        self.current = None;
        Ok(())
    }

    /// Accuracy (0..=100) on every test set, seen then unseen, plus detection
    /// pairs. Evaluation routes are reported when `report_routes` is set.
    pub fn evaluate(
        &self,
        stage: usize,
        report_routes: bool,
        observer: &mut dyn TrainObserver,
    ) -> Result<(Vec<f64>, Vec<(Detection, Detection)>)> {
        let seen = self.stream.seen.len();
        let mut row = Vec::with_capacity(self.test_queries.len());
        let mut pairs = Vec::new();
        for (j, task) in self.stream.all_tasks().enumerate() {
            let truth = if j < seen { Detection::Task(j) } else { Detection::Unseen };
            let mut correct = 0usize;
            for (n, (sample, q)) in task.test.iter().zip(&self.test_queries[j]).enumerate() {
                let (prompt, routing) = self.state.route(sample, q.as_slice())?;
                let predicted = self.state.model.predict(&sample.features, &prompt)?;
                correct += usize::from(predicted == sample.label);
                if let Some(routing) = routing {
                    let detected = match (routing.route, routing.task_slot) {
                        (Route::Unseen, _) => Detection::Unseen,
                        (_, PromptSlot::Task(t)) => Detection::Task(t),
                        _ => Detection::Unseen,
                    };
                    pairs.push((detected, truth));
                    if report_routes {
                        observer.on_route(&RouteEvent {
                            phase: Phase::Eval,
                            stage,
                            step: None,
                            task: j,
                            index: n,
                            from_memory: false,
                            routing,
                            label: sample.label,
                            predicted: Some(predicted),
                        });
                    }
                }
            }
            let total = task.test.len().max(1);
            row.push(100.0 * correct as f64 / total as f64);
        }
        Ok((row, pairs))
    }

    /// Trains every seen task in order and evaluates after each.
    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
        let seen = self.stream.seen.len();
        let mut final_pairs = Vec::new();
        for task in 0..seen {
            self.begin_task(task)?;
            for epoch in 0..self.config.epochs {
                for batch in self.epoch_batches()? {
                    self.train_batch(&batch, epoch, observer)?;
                }
            }
            self.end_task()?;
            let last = task + 1 == seen;
            let (row, pairs) = self
                .evaluate(task, last, observer)
                .map_err(Error::at("evaluation"))?;
            observer.on_task_end(task, &row);
            self.matrix.set_row(task, row)?;
            if last {
                final_pairs = pairs;
            }
        }

        let detection = if final_pairs.is_empty() {
            None
        } else {
            Some(detection_report(&final_pairs)?)
        };
        let mut diagnostics = Vec::new();
        if self.state.variant.uses_prompts() {
            for z in DIAGNOSTIC_Z {
                if z <= self.state.pool.len() && z <= self.state.memory.len() {
                    diagnostics.push(KeyDiagnostic {
                        z,
                        diversity: diversity_metric(&self.state.pool, &self.state.memory, z)?,
                        locality: locality_metric(&self.state.pool, &self.state.memory, z)?,
                    });
                }
            }
        }
        Ok(TrainOutcome {
            matrix: self.matrix,
            detection,
            detection_pairs: final_pairs,
            diagnostics,
            state: self.state,
        })
    }
}

/// Trains `variant` on `stream` from scratch.
pub fn train_stream(
    stream: &Stream,
    config: &TrainConfig,
    variant: Variant,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    Trainer::new(stream, config, variant)?.run(observer)
}
