//! Runs every (variant, seed) job of an experiment and writes its outputs.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! config.toml             resolved configuration
//! manifest.json           paths, seeds and variants of every job
//! summary.json            per-variant statistics and expectation results
//! aggregate.csv           one row per variant, mean and std per metric
//! metrics.json            flat report of every job, keyed by seed
//! <tag>/seed-<seed>/
//!     matrix.csv          performance matrix
//!     metrics.json        flat metric report
//!     routing.jsonl       routing records
//!     trace.jsonl         batch losses and per-task evaluation rows
//!     keys.json, keys.bin key-space snapshot
//!     memory.json         final replay memory
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use diana_core::learner::{train_stream, BatchTrace, RouteEvent, TrainConfig, TrainObserver, Variant};
use diana_core::streams::{generate_stream, Stream};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{check_all, SUMMARY_FILE};
use crate::config::ExperimentConfig;
use crate::report::{self, Metrics, RunSummary};
use crate::snapshot::KeySnapshot;

/// Writes routes and traces as JSON lines; the first IO error is kept and
/// reported after training.
struct JsonlObserver {
    routes: BufWriter<File>,
    trace: BufWriter<File>,
    train_routes: bool,
    error: Option<io::Error>,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum TraceLine<'a> {
    Batch(&'a BatchTrace),
    TaskEnd { stage: usize, row: &'a [f64] },
}

impl JsonlObserver {
    fn line<T: Serialize>(error: &mut Option<io::Error>, w: &mut BufWriter<File>, value: &T) {
        if error.is_some() {
            return;
        }
        let result = serde_json::to_writer(&mut *w, value)
            .map_err(io::Error::from)
            .and_then(|()| w.write_all(b"\n"));
        if let Err(e) = result {
            *error = Some(e);
        }
    }

    fn finish(mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.routes.flush()?;
        self.trace.flush()
    }
}

impl TrainObserver for JsonlObserver {
    fn wants_train_routes(&self) -> bool {
        self.train_routes
    }

    fn on_batch(&mut self, trace: &BatchTrace) {
        Self::line(&mut self.error, &mut self.trace, &TraceLine::Batch(trace));
    }

    fn on_route(&mut self, event: &RouteEvent) {
        Self::line(&mut self.error, &mut self.routes, event);
    }

    fn on_task_end(&mut self, stage: usize, row: &[f64]) {
        Self::line(&mut self.error, &mut self.trace, &TraceLine::TaskEnd { stage, row });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub variant: String,
    pub seed: u64,
    pub stream_seed: Option<u64>,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub record: JobRecord,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: Option<&'a Path>,
    output_dir: &'a Path,
    seeds: &'a [u64],
    variants: Vec<String>,
    stream_file: Option<&'a Path>,
    jobs: Vec<&'a JobRecord>,
    files: Vec<PathBuf>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn job_dir(output: &Path, variant: &Variant, seed: u64) -> PathBuf {
    output.join(variant.tag()).join(format!("seed-{seed}"))
}

fn run_job(
    stream: &Stream,
    stream_seed: Option<u64>,
    train: &TrainConfig,
    variant: Variant,
    seed: u64,
    output: &Path,
    train_routes: bool,
) -> anyhow::Result<JobResult> {
    let dir = job_dir(output, &variant, seed);
    fs::create_dir_all(&dir).with_context(|| format!("create {}", dir.display()))?;
    let path = |name: &str| dir.join(name);
    let config = TrainConfig { seed, ..train.clone() };

    let mut observer = JsonlObserver {
        routes: BufWriter::new(File::create(path("routing.jsonl"))?),
        trace: BufWriter::new(File::create(path("trace.jsonl"))?),
        train_routes,
        error: None,
    };
    let outcome = train_stream(stream, &config, variant, &mut observer)
        .with_context(|| format!("learner: {} seed {seed}", variant.tag()))?;
    observer.finish().context("write routing and trace logs")?;

    let metrics = report::collect_metrics(&outcome).context("metrics")?;
    report::write_matrix_csv(&outcome.matrix, File::create(path("matrix.csv"))?)?;
    write_json(&path("metrics.json"), &report::flat_report(&variant.tag(), &metrics))?;
    let snapshot = KeySnapshot::from_state(&outcome.state);
    write_json(&path("keys.json"), &snapshot)?;
    snapshot.write_binary(BufWriter::new(File::create(path("keys.bin"))?))?;
    write_json(&path("memory.json"), &outcome.state.memory)?;

    let files = [
        "matrix.csv",
        "metrics.json",
        "routing.jsonl",
        "trace.jsonl",
        "keys.json",
        "keys.bin",
        "memory.json",
    ]
    .iter()
    .map(|f| path(f))
    .collect();
    Ok(JobResult {
        record: JobRecord {
            variant: variant.tag(),
            seed,
            stream_seed,
            dir,
            files,
        },
        metrics,
    })
}

pub struct RunOutput {
    pub jobs: Vec<JobResult>,
    pub summary: RunSummary,
}

/// Runs all jobs in parallel, then aggregates. `config_path` is only echoed
/// into the manifest.
pub fn run_experiment(config: &ExperimentConfig, config_path: Option<&Path>) -> anyhow::Result<RunOutput> {
    let output = &config.output_dir;
    fs::create_dir_all(output).with_context(|| format!("create {}", output.display()))?;
    fs::write(output.join("config.toml"), config.to_toml())?;

    // one stream per seed unless the stream is shared
    let streams: BTreeMap<Option<u64>, Stream> = match &config.stream_file {
        Some(file) => {
            let f = File::open(file).with_context(|| format!("open {}", file.display()))?;
            let stream = crate::stream_csv::read_stream(io::BufReader::new(f))
                .with_context(|| format!("streams: import {}", file.display()))?;
            [(None, stream)].into()
        }
        None if config.fixed_stream => {
            [(Some(config.stream.seed), generate_stream(&config.stream).context("streams")?)].into()
        }
        None => config
            .seeds
            .iter()
            .map(|&seed| {
                let sc = diana_core::streams::StreamConfig {
                    seed,
                    ..config.stream.clone()
                };
                Ok((Some(seed), generate_stream(&sc).context("streams")?))
            })
            .collect::<anyhow::Result<_>>()?,
    };
    let stream_for = |seed: u64| -> (Option<u64>, &Stream) {
        if streams.len() == 1 {
            let (k, s) = streams.iter().next().expect("one stream");
            (*k, s)
        } else {
            (Some(seed), &streams[&Some(seed)])
        }
    };

    let variants = config.parsed_variants();
    let specs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|v| config.seeds.iter().map(move |&s| (*v, s)))
        .collect();
    let jobs = specs
        .par_iter()
        .map(|&(variant, seed)| {
            let (stream_seed, stream) = stream_for(seed);
            run_job(stream, stream_seed, &config.train, variant, seed, output, config.log_train_routes)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let summary_variants =
        report::summarize(jobs.iter().map(|j| (j.record.variant.as_str(), j.record.seed, &j.metrics)));
    let summary = RunSummary {
        expectations: check_all(&config.expectations, &summary_variants),
        variants: summary_variants,
    };

    let all_metrics: BTreeMap<String, BTreeMap<String, f64>> = {
        let mut m: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for j in &jobs {
            m.entry(format!("seed-{}", j.record.seed))
                .or_default()
                .extend(report::flat_report(&j.record.variant, &j.metrics));
        }
        m
    };
    write_json(&output.join("metrics.json"), &all_metrics)?;
    write_json(&output.join(SUMMARY_FILE), &summary)?;
    report::write_aggregate_csv(&summary.variants, File::create(output.join("aggregate.csv"))?)?;

    let top_files = ["config.toml", "metrics.json", SUMMARY_FILE, "aggregate.csv", "manifest.json"]
        .iter()
        .map(|f| output.join(f))
        .collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: config_path,
        output_dir: output,
        seeds: &config.seeds,
        variants: variants.iter().map(Variant::tag).collect(),
        stream_file: config.stream_file.as_deref(),
        jobs: jobs.iter().map(|j| &j.record).collect(),
        files: top_files,
    };
    write_json(&output.join("manifest.json"), &manifest)?;
    Ok(RunOutput { jobs, summary })
}

/// Plain-text aggregate: one line per variant and metric.
pub fn render_summary(summary: &RunSummary) -> String {
    let mut out = String::new();
    for (tag, v) in &summary.variants {
        out.push_str(&format!("{tag} ({} seeds)\n", v.seeds.len()));
        for (metric, s) in &v.stats {
            out.push_str(&format!("  {metric:<32} {:>10.4} ± {:.4}\n", s.mean, s.std));
        }
    }
    for e in &summary.expectations {
        let status = match e.holds {
            Some(true) => "ok",
            Some(false) => "VIOLATED",
            None => "MISSING",
        };
        out.push_str(&format!("[{status}] {}\n", e.expectation));
    }
    out
}
