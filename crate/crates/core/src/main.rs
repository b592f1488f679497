use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};

use agglab::aggregate::{aggregate, AggregatorOptions, Method};
use agglab::annotate::{annotate_dataset, write_annotation_run, AnnotateError, Backend, LlmWorkerProfile, API_KEY_ENV};
use agglab::bench::{
    accuracy, emit_report, emit_stats_report, emit_worker_report, run_experiment, trials_from_jsonl, trials_to_jsonl, BenchError,
    Experiment, ReportFormat,
};
use agglab::dataset::{
    dataset_stats, load_dataset, per_worker_accuracy, read_gold_csv, read_label_space, read_labels_csv, Dataset, Instance,
};

#[derive(Debug, Parser)]
#[command(name = "agglab", version, about = "Truth inference for crowd and LLM annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label a dataset with one or more LLM workers.
    Annotate(AnnotateArgs),
    /// Estimate true labels from a labels CSV.
    Aggregate(AggregateArgs),
    /// Run a hybrid crowd + LLM experiment over several trials.
    Benchmark(BenchmarkArgs),
    /// Render a summary table from a trials JSONL file.
    Report(ReportArgs),
    /// Dataset size and per-worker accuracy tables.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Dataset manifest; every instance needs text.
    #[arg(long)]
    manifest: PathBuf,
    /// LLM worker profile JSON. Repeat for several workers.
    #[arg(long, required = true)]
    profile: Vec<PathBuf>,
    /// Output directory for `<worker>.csv` files and `outcomes.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Read canned responses from `<dir>/<worker slug>/<instance_id>.txt` or `<dir>/<instance_id>.txt` instead of calling the endpoint.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Labels CSV with header `instance_id,worker_id,label`.
    #[arg(long)]
    labels: PathBuf,
    /// Label space file: one label per line, `!abstain <label>` for abstain labels.
    #[arg(long)]
    label_space: PathBuf,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["mv", "ds", "glad"]))]
    method: String,
    /// Gold CSV with header `instance_id,label`; prints accuracy when given.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Where to write the result JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// EM iteration cap (DS, GLAD).
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Convergence threshold on the largest posterior change (DS, GLAD).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Additive smoothing of DS counts.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Initial gradient step of the GLAD M-step.
    #[arg(long)]
    glad_step: Option<f64>,
    /// Gradient steps per GLAD M-step.
    #[arg(long)]
    glad_inner_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory for trials.jsonl, summary.md and summary.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Trials JSONL written by `benchmark`.
    trials: PathBuf,
    /// markdown (md) or tsv.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Dataset manifest. Repeat for several datasets.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// markdown (md) or tsv.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Count abstentions as wrong in per-worker accuracy instead of skipping them.
    #[arg(long)]
    include_abstain: bool,
    /// Write the tables here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn bench_failure(e: BenchError) -> Failure {
    match e {
        BenchError::Trial { .. } | BenchError::Io { .. } => Failure::Runtime(e.into()),
        other => Failure::Validation(other.into()),
    }
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).runtime()?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).runtime()
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_annotate(a: AnnotateArgs) -> CmdResult {
    let d = load_dataset(&a.manifest).invalid()?;
    let profiles = a.profile.iter().map(|p| LlmWorkerProfile::load(p)).collect::<Result<Vec<_>, _>>().invalid()?;
    let backend = match &a.fixtures {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Failure::Validation(anyhow!("fixture directory {} does not exist", dir.display())));
            }
            Backend::Fixtures(dir.clone())
        }
        None => match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.is_empty() => Backend::Http { api_key: Some(k) },
            _ => return Err(Failure::Validation(AnnotateError::MissingApiKey.into())),
        },
    };
    let run = annotate_dataset(&profiles, &d, &backend).map_err(|e| match e {
        AnnotateError::Io { .. } | AnnotateError::Client(_) => Failure::Runtime(e.into()),
        other => Failure::Validation(other.into()),
    })?;
    let paths = write_annotation_run(&run, &a.out).runtime()?;
    for (w, p) in run.workers.iter().zip(&paths) {
        println!(
            "{}: {} labels, {} unmatched, {} failed -> {}",
            w.worker_id,
            w.records.len(),
            w.unmatched,
            w.failed,
            p.display()
        );
    }
    println!("outcomes: {}", a.out.join("outcomes.jsonl").display());
    if run.failed() > 0 {
        return Err(Failure::Runtime(anyhow!("{} request(s) failed after retries", run.failed())));
    }
    Ok(())
}

fn cmd_aggregate(a: AggregateArgs) -> CmdResult {
    let method: Method = a.method.parse().invalid()?;
    let mut opts = AggregatorOptions { seed: a.seed, ..AggregatorOptions::new(method) };
    if let Some(v) = a.max_iterations {
        opts.max_iterations = v;
    }
    if let Some(v) = a.tolerance {
        opts.tolerance = v;
    }
    if let Some(v) = a.smoothing {
        opts.smoothing = v;
    }
    if let Some(v) = a.glad_step {
        opts.glad_step = v;
    }
    if let Some(v) = a.glad_inner_iters {
        opts.glad_inner_iters = v;
    }
    opts.validate().invalid()?;
    println!("seed: {}", opts.seed);

    let space = read_label_space(&a.label_space).invalid()?;
    let records = read_labels_csv(&a.labels, &space).invalid()?;
    let mut instances: Vec<Instance> = Vec::new();
    if let Some(g) = &a.gold {
        for (id, label) in read_gold_csv(g, &space).invalid()? {
            instances.push(Instance { gold: Some(label), ..Instance::new(id) });
        }
    }
    let name = a.labels.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    let d = Dataset::from_records(name, space, instances, records).invalid()?;
    let result = aggregate(&d, &opts).runtime()?;
    let json = serde_json::to_string_pretty(&result).context("serializing result").runtime()?;
    write_file(&a.out, &json)?;
    if !result.converged {
        log::warn!("{} did not converge in {} iterations", method, result.iterations);
    }
    println!("method: {}  iterations: {}  converged: {}", method.display_name(), result.iterations, result.converged);
    if a.gold.is_some() {
        let acc = accuracy(&result.estimates, &d.gold()).invalid()?;
        println!("accuracy: {acc:.3}");
    }
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs) -> CmdResult {
    let exp = Experiment::load(&a.config).map_err(bench_failure)?;
    println!("master seed: {}", exp.config.master_seed);
    println!("trials: {}", exp.config.effective_trials());
    let outcome = run_experiment(&exp).map_err(bench_failure)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display())).runtime()?;
    write_file(&a.out_dir.join("trials.jsonl"), &trials_to_jsonl(&outcome.trials))?;
    let md = emit_report(&outcome.summary, ReportFormat::Markdown).map_err(bench_failure)?;
    let tsv = emit_report(&outcome.summary, ReportFormat::Tsv).map_err(bench_failure)?;
    write_file(&a.out_dir.join("summary.md"), &md)?;
    write_file(&a.out_dir.join("summary.tsv"), &tsv)?;
    print!("{md}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let format: ReportFormat = a.format.parse().invalid()?;
    let text = fs::read_to_string(&a.trials).with_context(|| format!("reading {}", a.trials.display())).invalid()?;
    let trials = trials_from_jsonl(&text).invalid()?;
    let summary = agglab::bench::summarize(&trials);
    let table = emit_report(&summary, format).invalid()?;
    emit(a.out.as_deref(), &table)
}

fn cmd_stats(a: StatsArgs) -> CmdResult {
    let format: ReportFormat = a.format.parse().invalid()?;
    let datasets = a.manifest.iter().map(|m| load_dataset(m)).collect::<Result<Vec<_>, _>>().invalid()?;
    let sizes: Vec<_> = datasets.iter().map(|d| (d.name.clone(), dataset_stats(d))).collect();
    let mut text = emit_stats_report(&sizes, format);
    let with_gold: Vec<&Dataset> = datasets.iter().filter(|d| d.has_gold()).collect();
    if !with_gold.is_empty() {
        let reports = with_gold
            .iter()
            .map(|d| per_worker_accuracy(d, !a.include_abstain).map(|r| (d.name.clone(), r)))
            .collect::<Result<Vec<_>, _>>()
            .invalid()?;
        text.push('\n');
        text.push_str(&emit_worker_report(&reports, format));
    }
    emit(a.out.as_deref(), &text)
}

/// Joins the error chain, skipping causes already spelled out by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn usage_for_args() -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let name = std::env::args().skip(1).find(|a| cmd.find_subcommand(a).is_some());
    match name.and_then(|n| cmd.find_subcommand_mut(&n).map(|c| c.render_usage())) {
        Some(u) => u.to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for_args());
            }
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Annotate(a) => cmd_annotate(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Report(a) => cmd_report(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
