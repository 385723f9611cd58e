//! Side-by-side comparison of finished runs and ordering checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use diana_core::learner::Variant;

use crate::report::{ExpectationResult, RunSummary, Stat, VariantSummary};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Op {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Gt => a > b,
            Op::Ge => a >= b,
            Op::Lt => a < b,
            Op::Le => a <= b,
        }
    }
}

/// `<variant>.<metric> <op> <variant>.<metric>`, compared on seed means.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub left: (String, String),
    pub op: Op,
    pub right: (String, String),
}

fn operand(s: &str) -> Result<(String, String), String> {
    let (tag, metric) = s
        .split_once('.')
        .ok_or_else(|| format!("`{s}` is not of the form variant.metric"))?;
    let variant = Variant::parse(tag).map_err(|e| e.to_string())?;
    if metric.is_empty() {
        return Err(format!("`{s}` has no metric"));
    }
    Ok((variant.tag(), metric.to_string()))
}

impl Expectation {
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let [left, op, right] = parts[..] else {
            return Err(format!("expected `a.metric <op> b.metric`, got `{s}`"));
        };
        let op = match op {
            ">" => Op::Gt,
            ">=" => Op::Ge,
            "<" => Op::Lt,
            "<=" => Op::Le,
            other => return Err(format!("unknown operator `{other}`")),
        };
        Ok(Self {
            left: operand(left)?,
            op,
            right: operand(right)?,
        })
    }

    /// `None` if either side is missing.
    pub fn check(&self, variants: &BTreeMap<String, VariantSummary>) -> Option<bool> {
        let mean = |(tag, metric): &(String, String)| variants.get(tag)?.stats.get(metric).map(|s| s.mean);
        Some(self.op.holds(mean(&self.left)?, mean(&self.right)?))
    }
}

pub fn check_all(expectations: &[String], variants: &BTreeMap<String, VariantSummary>) -> Vec<ExpectationResult> {
    expectations
        .iter()
        .map(|e| ExpectationResult {
            expectation: e.clone(),
            holds: Expectation::parse(e).ok().and_then(|x| x.check(variants)),
        })
        .collect()
}

pub fn load_summaries(dirs: &[PathBuf]) -> anyhow::Result<Vec<RunSummary>> {
    let missing: Vec<String> = dirs
        .iter()
        .map(|d| d.join(SUMMARY_FILE))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        anyhow::bail!("missing reports: {}", missing.join(", "));
    }
    dirs.iter()
        .map(|d| {
            let path = d.join(SUMMARY_FILE);
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
        })
        .collect()
}

/// One column of the comparison: a variant of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub run: String,
    pub variant: String,
    pub stats: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub columns: Vec<Column>,
    pub metrics: Vec<String>,
    pub expectations: Vec<ExpectationResult>,
}

impl Comparison {
    /// Value of `metric` in `column` minus the first column's.
    pub fn delta(&self, column: usize, metric: &str) -> Option<f64> {
        let base = self.columns.first()?.stats.get(metric)?.mean;
        Some(self.columns.get(column)?.stats.get(metric)?.mean - base)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ExpectationResult> {
        self.expectations.iter().filter(|e| e.holds != Some(true))
    }
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Expectations from the runs themselves plus `extra`; a variant appearing
/// in several runs is taken from the first.
pub fn compare(dirs: &[PathBuf], extra: &[String]) -> anyhow::Result<Comparison> {
    if dirs.is_empty() {
        anyhow::bail!("nothing to compare");
    }
    let summaries = load_summaries(dirs)?;
    let mut columns = Vec::new();
    let mut merged: BTreeMap<String, VariantSummary> = BTreeMap::new();
    let mut expectations: Vec<String> = Vec::new();
    for (dir, summary) in dirs.iter().zip(&summaries) {
        for (tag, v) in &summary.variants {
            columns.push(Column {
                run: run_label(dir),
                variant: tag.clone(),
                stats: v.stats.clone(),
            });
            merged.entry(tag.clone()).or_insert_with(|| v.clone());
        }
        for e in &summary.expectations {
            if !expectations.contains(&e.expectation) {
                expectations.push(e.expectation.clone());
            }
        }
    }
    for e in extra {
        Expectation::parse(e).map_err(|m| anyhow::anyhow!("expectation `{e}`: {m}"))?;
        if !expectations.contains(e) {
            expectations.push(e.clone());
        }
    }
    let metrics: BTreeSet<String> = columns.iter().flat_map(|c| c.stats.keys().cloned()).collect();
    Ok(Comparison {
        columns,
        metrics: metrics.into_iter().collect(),
        expectations: check_all(&expectations, &merged),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn render(c: &Comparison) -> String {
    let mut header = vec!["metric".to_string()];
    for (i, col) in c.columns.iter().enumerate() {
        header.push(format!("{}/{}", col.run, col.variant));
        if i > 0 {
            header.push("delta".to_string());
        }
    }
    let mut rows = vec![header];
    for m in &c.metrics {
        let mut row = vec![m.clone()];
        for (i, col) in c.columns.iter().enumerate() {
            row.push(match col.stats.get(m) {
                Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
                None => "-".to_string(),
            });
            if i > 0 {
                row.push(cell(c.delta(i, m)));
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    for e in &c.expectations {
        let status = match e.holds {
            Some(true) => "ok",
            Some(false) => "VIOLATED",
            None => "MISSING",
        };
        let _ = writeln!(out, "[{status}] {}", e.expectation);
    }
    out
}

pub fn write_csv(c: &Comparison, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "run", "variant", "mean", "std", "n", "delta"])?;
    for m in &c.metrics {
        for (i, col) in c.columns.iter().enumerate() {
            if let Some(s) = col.stats.get(m) {
                w.write_record([
                    m.clone(),
                    col.run.clone(),
                    col.variant.clone(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    s.n.to_string(),
                    c.delta(i, m).map(|d| d.to_string()).unwrap_or_default(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
