//! Stream export and import as CSV.
//!
//! One row per sample: `x0..x{d-1},label,format_id,split,task,task_id`.
//! `split` is `train` or `test`; `task` is the stream position (seen tasks
//! first, then unseen); `task_id` is filled on training rows only, since test
//! records never carry a task id.

use std::io::{Read, Write};

use anyhow::{bail, ensure, Context};
use diana_core::streams::{Stream, StreamConfig, TaskData, TaskSpec};
use diana_core::vectorspace::SampleRecord;

pub fn write_stream<W: Write>(stream: &Stream, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = stream.input_dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend(["label", "format_id", "split", "task", "task_id"].map(String::from));
    w.write_record(&header)?;
    for (t, task) in stream.all_tasks().enumerate() {
        for (split, samples) in [("train", &task.train), ("test", &task.test)] {
            for s in samples {
                let mut record: Vec<String> = s.features.iter().map(f64::to_string).collect();
                record.push(s.label.to_string());
                record.push(s.format_id.to_string());
                record.push(split.to_string());
                record.push(t.to_string());
                record.push(s.task_id.map(|id| id.to_string()).unwrap_or_default());
                w.write_record(&record)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Default)]
struct Pending {
    format: Option<usize>,
    train: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
}

fn class_means(samples: &[SampleRecord], classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in samples {
        counts[s.label] += 1;
        sums[s.label].iter_mut().zip(&s.features).for_each(|(a, x)| *a += x);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, n)| sum.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect()
}

fn pooled_noise(samples: &[SampleRecord], means: &[Vec<f64>]) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for s in samples {
        for (x, m) in s.features.iter().zip(&means[s.label]) {
            ss += (x - m).powi(2);
            n += 1;
        }
    }
    let sigma = (ss / n.max(1) as f64).sqrt();
    if sigma > 0.0 {
        sigma
    } else {
        f64::MIN_POSITIVE
    }
}

/// Rebuilds a stream from [`write_stream`] output. Shapes come from the
/// data; prototypes are per-class means and the noise a pooled estimate.
/// Geometry fields of the config keep their defaults and `seed` is 0.
pub fn read_stream<R: Read>(input: R) -> anyhow::Result<Stream> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let n = header.len();
    ensure!(n >= 6, "expected feature columns plus label,format_id,split,task,task_id");
    let tail: Vec<&str> = header.iter().skip(n - 5).collect();
    ensure!(
        tail == ["label", "format_id", "split", "task", "task_id"],
        "unexpected trailing columns {tail:?}"
    );
    let dim = n - 5;
    let mut tasks: Vec<Pending> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let features = (0..dim)
            .map(|i| field(i).parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("row {row}: bad feature"))?;
        let label: usize = field(dim).parse().with_context(|| format!("row {row}: bad label"))?;
        let format_id: usize = field(dim + 1).parse().with_context(|| format!("row {row}: bad format_id"))?;
        let task: usize = field(dim + 3).parse().with_context(|| format!("row {row}: bad task"))?;
        let task_id = match field(dim + 4) {
            "" => None,
            s => Some(s.parse::<usize>().with_context(|| format!("row {row}: bad task_id"))?),
        };
        if tasks.len() <= task {
            tasks.resize_with(task + 1, Pending::default);
        }
        let pending = &mut tasks[task];
        if *pending.format.get_or_insert(format_id) != format_id {
            bail!("row {row}: task {task} mixes formats");
        }
        let sample = SampleRecord {
            features,
            label,
            task_id,
            format_id,
        };
        match field(dim + 2) {
            "train" => {
                ensure!(task_id == Some(task), "row {row}: training rows need task_id = task");
                pending.train.push(sample);
            }
            "test" => {
                ensure!(task_id.is_none(), "row {row}: test rows must not carry a task_id");
                pending.test.push(sample);
            }
            other => bail!("row {row}: unknown split `{other}`"),
        }
    }
    ensure!(!tasks.is_empty(), "stream has no samples");
    let seen_tasks = tasks.iter().take_while(|t| !t.train.is_empty()).count();
    ensure!(seen_tasks > 0, "stream has no training data");
    if let Some(t) = tasks[seen_tasks..].iter().position(|t| !t.train.is_empty()) {
        bail!("task {} has training data after an unseen task", seen_tasks + t);
    }
    if let Some(t) = tasks.iter().position(|t| t.test.is_empty()) {
        bail!("task {t} has no test data");
    }

    let all = || tasks.iter().flat_map(|t| t.train.iter().chain(&t.test));
    let classes = all().map(|s| s.label).max().unwrap_or(0) + 1;
    let formats = tasks.iter().filter_map(|t| t.format).max().unwrap_or(0) + 1;
    let config = StreamConfig {
        seen_tasks,
        unseen_tasks: tasks.len() - seen_tasks,
        formats,
        classes,
        input_dim: dim,
        train_per_task: tasks.iter().map(|t| t.train.len()).max().unwrap_or(0),
        test_per_task: tasks.iter().map(|t| t.test.len()).max().unwrap_or(0),
        seed: 0,
        ..StreamConfig::default()
    };
    let data: Vec<TaskData> = tasks
        .into_iter()
        .enumerate()
        .map(|(task_id, t)| {
            let basis = if t.train.is_empty() { &t.test } else { &t.train };
            let prototypes = class_means(basis, classes, dim);
            let noise = pooled_noise(basis, &prototypes);
            TaskData {
                spec: TaskSpec {
                    task_id,
                    format_id: t.format.unwrap_or(0),
                    prototypes,
                    noise,
                    train_size: t.train.len(),
                    test_size: t.test.len(),
                },
                train: t.train,
                test: t.test,
            }
        })
        .collect();
    let mut data = data;
    let unseen = data.split_off(seen_tasks);
    Ok(Stream {
        config,
        seen: data,
        unseen,
    })
}
