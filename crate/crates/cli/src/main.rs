use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use diana_cli::compare;
use diana_cli::config::{ConfigError, ExperimentConfig};
use diana_cli::runner;
use diana_cli::snapshot::KeySnapshot;
use diana_cli::stream_csv;
use diana_core::streams::generate_stream;

#[derive(Parser)]
#[command(name = "diana", version, about = "Hierarchical prompt routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured variant for every seed and write reports.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Override the seed list, e.g. `--seeds 42,43,44`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the variant list; repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also log training-time routes.
        #[arg(long)]
        log_train_routes: bool,
        /// Extra ordering check; repeatable.
        #[arg(long = "expect")]
        expectations: Vec<String>,
    },
    /// Compare finished runs side by side.
    Compare {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Ordering check such as `full.A_N > sequential-finetune.A_N`.
        #[arg(long = "expect")]
        expectations: Vec<String>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Exit 1 when an ordering check fails or cannot be evaluated.
        #[arg(long)]
        strict: bool,
    },
    /// Export a generated stream as CSV.
    GenStream {
        /// Experiment config whose `[stream]` table is used; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Dump task keys, boundaries and meta keys as JSON.
    InspectKeys {
        /// `keys.bin`, `keys.json`, or a job directory containing them.
        path: PathBuf,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn output_writer(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_snapshot(path: &Path) -> anyhow::Result<KeySnapshot> {
    let path = if path.is_dir() {
        let bin = path.join("keys.bin");
        if bin.is_file() {
            bin
        } else {
            path.join("keys.json")
        }
    } else {
        path.to_path_buf()
    };
    let file = File::open(&path).with_context(|| format!("open {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_reader(BufReader::new(file))?)
    } else {
        Ok(KeySnapshot::read_binary(BufReader::new(file))?)
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            seeds,
            variants,
            output_dir,
            log_train_routes,
            expectations,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if !variants.is_empty() {
                cfg.variants = variants;
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            cfg.log_train_routes |= log_train_routes;
            cfg.expectations.extend(expectations);
            cfg.validate()?;
            let out = runner::run_experiment(&cfg, Some(&config))?;
            print!("{}", runner::render_summary(&out.summary));
            eprintln!("wrote {}", cfg.output_dir.display());
        }
        Command::Compare {
            runs,
            expectations,
            csv,
            strict,
        } => {
            let c = compare::compare(&runs, &expectations)?;
            print!("{}", compare::render(&c));
            if let Some(path) = csv {
                compare::write_csv(&c, &path)?;
            }
            if strict && c.violations().next().is_some() {
                return Err(anyhow::anyhow!("compare: ordering checks failed").into());
            }
        }
        Command::GenStream { config, seed, output } => {
            let mut stream_config = match config {
                Some(path) => ExperimentConfig::load(&path)?.stream,
                None => Default::default(),
            };
            if let Some(seed) = seed {
                stream_config.seed = seed;
            }
            stream_config
                .validate()
                .map_err(|e| ConfigError::new("stream", e))?;
            let stream = generate_stream(&stream_config).context("streams")?;
            let mut w = output_writer(output.as_deref())?;
            stream_csv::write_stream(&stream, &mut w).context("write stream")?;
            w.flush()?;
        }
        Command::InspectKeys { path } => {
            let snapshot = load_snapshot(&path)?;
            let mut w = output_writer(None)?;
            serde_json::to_writer_pretty(&mut w, &snapshot).context("write json")?;
            writeln!(w)?;
            w.flush()?;
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
