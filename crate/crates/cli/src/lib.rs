//! Command-line surface of the harness.
//!
//! Exit codes: 0 success, 2 usage, config or parse errors, 3 when a run
//! exceeds its failure ceiling. Machine-readable console lines are
//! `key=value` pairs on one line.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use cyclecap_core::domain::validate_entry;
use cyclecap_core::ingest::{dataset_summary, load_dataset, write_jsonl_dataset, DatasetFormat};
use cyclecap_core::providers::CallCounter;
use cyclecap_core::store::{load_run, persist_gap, persist_run};
use cyclecap_core::{compute_gap, Condition, DatasetEntry, Error, Pipeline};

use config::{Overrides, RunConfigFile};
use report::ReportFormat;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CEILING: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "cyclecap",
    version,
    about = "Cycle-consistency evaluation of image captions"
)]
pub struct Cli {
    /// Run-config JSON file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_parallel: Option<usize>,
    /// Output file (a directory for validate-framework).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log verbosity on stderr: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Coco,
    Jsonl,
}

#[derive(Debug, clap::Args)]
pub struct DatasetArgs {
    pub dataset: PathBuf,
    /// Dataset format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Directory COCO file names resolve against.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset and print its summary.
    Validate(DatasetArgs),
    /// Score a captioning model over a dataset.
    Eval(DatasetArgs),
    /// Run the correct/incorrect validation protocol and report the gap.
    ValidateFramework(DatasetArgs),
    /// Emit a report from persisted runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Write a JSON-lines dataset drawn from the configured sim world.
    Synth {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 5)]
        refs: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("dataset has {0} error(s)")]
    Invalid(usize),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::FailureCeiling { .. }) => EXIT_CEILING,
            _ => EXIT_USAGE,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command, writing console lines to `out` and
/// diagnostics to `err`. Returns the exit code.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            }
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let overrides = Overrides {
        seed: cli.seed,
        cache_dir: cli.cache_dir.clone(),
        max_parallel: cli.max_parallel,
    };
    match &cli.command {
        Command::Validate(d) => cmd_validate(&d.dataset, d.format, d.image_root.as_deref(), out),
        Command::Eval(d) => {
            let config = load_config(cli, &overrides)?;
            let dataset = read_dataset(d)?;
            cmd_eval(&config, &dataset, require_out(cli)?, out)
        }
        Command::ValidateFramework(d) => {
            let config = load_config(cli, &overrides)?;
            let dataset = read_dataset(d)?;
            cmd_validate_framework(&config, &dataset, require_out(cli)?, out)
        }
        Command::Report { runs, format } => cmd_report(runs, *format, cli.out.as_deref(), out),
        Command::Synth { n, refs } => {
            let config = load_config(cli, &overrides)?;
            let world = config.world()?;
            let path = require_out(cli)?;
            write_jsonl_dataset(&world.synthetic_dataset(*n, *refs), path)?;
            writeln!(
                out,
                "images={n} captions={} out={}",
                n * refs,
                path.display()
            )?;
            Ok(())
        }
    }
}

fn load_config(cli: &Cli, overrides: &Overrides) -> CliResult<RunConfigFile> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config".into()))?;
    let mut config = RunConfigFile::load(path)?;
    config.apply(overrides)?;
    Ok(config)
}

fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --out".into()))
}

fn read_dataset(args: &DatasetArgs) -> CliResult<Vec<DatasetEntry>> {
    let format = match args.format {
        Some(FormatArg::Coco) => DatasetFormat::Coco,
        Some(FormatArg::Jsonl) => DatasetFormat::Jsonl,
        None => DatasetFormat::detect(&args.dataset),
    };
    Ok(load_dataset(
        &args.dataset,
        format,
        args.image_root.as_deref(),
    )?)
}

pub fn cmd_validate(
    dataset: &Path,
    format: Option<FormatArg>,
    image_root: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let entries = read_dataset(&DatasetArgs {
        dataset: dataset.to_path_buf(),
        format,
        image_root: image_root.map(Path::to_path_buf),
    })?;
    let summary = dataset_summary(&entries);
    writeln!(
        out,
        "images={} captions={}",
        summary.n_images, summary.n_captions
    )?;
    let histogram: Vec<String> = summary
        .captions_per_image
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect();
    writeln!(out, "captions_per_image={}", histogram.join(","))?;
    let mut errors = 0;
    for entry in &entries {
        let report = validate_entry(entry);
        errors += report.errors().count();
        for issue in &report.issues {
            writeln!(out, "{issue}")?;
        }
    }
    match errors {
        0 => Ok(()),
        n => Err(CliError::Invalid(n)),
    }
}

/// Scores the configured captioner; persists the run to `out_path`.
pub fn cmd_eval(
    config: &RunConfigFile,
    dataset: &[DatasetEntry],
    out_path: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let counter = CallCounter::default();
    let providers = config.build_providers()?.counted(&counter);
    let pipeline = Pipeline::from_config(providers, &config.run)?;
    let run = pipeline.evaluate_model(dataset, &config.run)?;
    persist_run(&run, out_path)?;
    writeln!(
        out,
        "mean_cosine={} n={}",
        fmt_opt(run.summary.mean),
        run.records.len()
    )?;
    writeln!(
        out,
        "cache_hit_rate={} provider_calls={} failures={}",
        fmt_opt(run.stats.cache_hit_rate()),
        counter.get(),
        run.failures.len()
    )?;
    Ok(())
}

/// Runs both validation arms with one seed, persists
/// `correct.json`, `incorrect.json` and `gap.json` under `out_dir`.
pub fn cmd_validate_framework(
    config: &RunConfigFile,
    dataset: &[DatasetEntry],
    out_dir: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let counter = CallCounter::default();
    let providers = config.build_providers()?.counted(&counter);
    let pipeline = Pipeline::from_config(providers, &config.run)?;
    let correct = pipeline.human_validation_run(dataset, Condition::Correct, &config.run)?;
    let incorrect = pipeline.human_validation_run(dataset, Condition::Incorrect, &config.run)?;
    let gap = compute_gap(&correct, &incorrect)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", out_dir.display())))?;
    persist_run(&correct, &out_dir.join("correct.json"))?;
    persist_run(&incorrect, &out_dir.join("incorrect.json"))?;
    persist_gap(&gap, &out_dir.join("gap.json"))?;
    writeln!(
        out,
        "gap={:.4} correct={:.4} incorrect={:.4} n={}",
        gap.gap, gap.mean_correct, gap.mean_incorrect, gap.n
    )?;
    writeln!(out, "provider_calls={}", counter.get())?;
    Ok(())
}

pub fn cmd_report(
    runs: &[PathBuf],
    format: ReportFormat,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let loaded = runs
        .iter()
        .map(|p| load_run(p))
        .collect::<cyclecap_core::Result<Vec<_>>>()?;
    match out_path {
        None => report::write_report(&loaded, format, out)?,
        Some(path) => {
            let mut buf = Vec::new();
            report::write_report(&loaded, format, &mut buf)?;
            cyclecap_core::store::write_atomic(path, |f| {
                f.write_all(&buf)
                    .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
            })?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}"))
        .unwrap_or_else(|| "none".into())
}
