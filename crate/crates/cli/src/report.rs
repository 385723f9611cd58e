//! Metric reports, performance-matrix CSV and the per-variant aggregate.

use std::collections::BTreeMap;
use std::io::Write;

use diana_core::learner::TrainOutcome;
use diana_core::metrics::{avg_forget, avg_performance, DetectionScores, PerformanceMatrix};
use serde::{Deserialize, Serialize};

/// Metric name to value for one job.
pub type Metrics = BTreeMap<String, f64>;

pub const A_N: &str = "A_N";
pub const A_N_UNSEEN: &str = "A_N'";
pub const F_N: &str = "F_N";

pub fn diversity_key(z: usize) -> String {
    format!("diversity:Z={z}")
}

pub fn locality_key(z: usize) -> String {
    format!("locality:Z={z}")
}

fn detection_keys(metrics: &mut Metrics, prefix: &str, scores: Option<DetectionScores>) {
    if let Some(s) = scores {
        metrics.insert(format!("{prefix}detection_accuracy"), s.accuracy);
        metrics.insert(format!("{prefix}detection_macro_f1"), s.macro_f1);
    }
}

pub fn collect_metrics(outcome: &TrainOutcome) -> diana_core::Result<Metrics> {
    let mut m = Metrics::new();
    let (a, a_unseen) = avg_performance(&outcome.matrix)?;
    m.insert(A_N.into(), a);
    if let Some(a) = a_unseen {
        m.insert(A_N_UNSEEN.into(), a);
    }
    if outcome.matrix.seen() >= 2 {
        m.insert(F_N.into(), avg_forget(&outcome.matrix)?);
    }
    if let Some(r) = outcome.detection {
        detection_keys(&mut m, "", Some(r.overall));
        detection_keys(&mut m, "seen_", r.seen);
        detection_keys(&mut m, "unseen_", r.unseen);
    }
    for d in &outcome.diagnostics {
        m.insert(diversity_key(d.z), d.diversity);
        m.insert(locality_key(d.z), d.locality);
    }
    Ok(m)
}

/// Flat report keyed `<tag>:<metric>`, e.g. `full:diversity:Z=2`.
pub fn flat_report(tag: &str, metrics: &Metrics) -> BTreeMap<String, f64> {
    metrics
        .iter()
        .map(|(k, v)| (format!("{tag}:{k}"), *v))
        .collect()
}

pub fn matrix_header(m: &PerformanceMatrix) -> Vec<String> {
    let mut header = vec!["stage".to_string()];
    header.extend((0..m.seen()).map(|j| format!("seen_{j}")));
    header.extend((0..m.unseen()).map(|j| format!("unseen_{j}")));
    header
}

pub fn write_matrix_csv<W: Write>(m: &PerformanceMatrix, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(matrix_header(m))?;
    for stage in 0..m.seen() {
        let mut record = vec![stage.to_string()];
        match m.row(stage) {
            Some(row) => record.extend(row.iter().map(f64::to_string)),
            None => record.extend(std::iter::repeat_n(String::new(), m.seen() + m.unseen())),
        }
        w.write_record(record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub seeds: Vec<u64>,
    pub stats: BTreeMap<String, Stat>,
    /// Per-seed values, in `seeds` order.
    pub per_seed: BTreeMap<String, Vec<f64>>,
}

/// Everything `compare` needs from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variants: BTreeMap<String, VariantSummary>,
    pub expectations: Vec<ExpectationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub expectation: String,
    /// `None` when a side is missing from the run.
    pub holds: Option<bool>,
}

/// Groups per-job metrics by variant; jobs must be in (variant, seed) order.
pub fn summarize<'a>(jobs: impl IntoIterator<Item = (&'a str, u64, &'a Metrics)>) -> BTreeMap<String, VariantSummary> {
    let mut grouped: BTreeMap<String, (Vec<u64>, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
    for (tag, seed, metrics) in jobs {
        let (seeds, values) = grouped.entry(tag.to_string()).or_default();
        seeds.push(seed);
        for (k, v) in metrics {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    grouped
        .into_iter()
        .map(|(tag, (seeds, per_seed))| {
            let stats = per_seed.iter().map(|(k, v)| (k.clone(), Stat::of(v))).collect();
            (tag, VariantSummary { seeds, stats, per_seed })
        })
        .collect()
}

/// One row per variant: `variant,seeds,<metric>_mean,<metric>_std,...`.
pub fn write_aggregate_csv<W: Write>(variants: &BTreeMap<String, VariantSummary>, out: W) -> csv::Result<()> {
    let names: std::collections::BTreeSet<&String> =
        variants.values().flat_map(|v| v.stats.keys()).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variant".to_string(), "seeds".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    w.write_record(&header)?;
    for (tag, v) in variants {
        let mut record = vec![tag.clone(), v.seeds.len().to_string()];
        for n in &names {
            match v.stats.get(*n) {
                Some(s) => {
                    record.push(s.mean.to_string());
                    record.push(s.std.to_string());
                }
                None => record.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
