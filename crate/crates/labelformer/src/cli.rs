//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use labelformer_core::data::{generate_dataset, DatasetSpec};
use labelformer_core::eval::{DecodeMode, PROTOCOLS};
use labelformer_core::model::Encoding;
use labelformer_core::tasks::Task;
use labelformer_core::tokens::TaskMode;
use labelformer_core::train::MetricSummary;
use serde::{Deserialize, Serialize};

use crate::analyses::{run_analyses, AnalysisOptions, ANALYSES};
use crate::checkpoint::CheckpointManifest;
use crate::config::{parse_arch, ExperimentConfig};
use crate::experiment::{evaluate_run, output_root, train_run, Run, TrainOptions};
use crate::report::write_csv;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "labelformer",
    version,
    about = "Train and analyze small transformers on rearrangement tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file and its manifest.
    GenData(GenDataArgs),
    /// Train a model, writing checkpoints and a run log.
    Train(TrainArgs),
    /// Evaluate a checkpoint under a named protocol.
    Eval(EvalArgs),
    /// Run interpretability analyses on a checkpoint.
    Analyze(AnalyzeArgs),
    /// Summarize every run under the output root.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub label_range: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    /// Longest length assigned to the training split.
    #[arg(long, default_value_t = 25)]
    pub train_max_len: usize,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse::<Task>().map_err(|e| e.to_string())
}

fn parse_encoding(s: &str) -> std::result::Result<Encoding, String> {
    s.parse::<Encoding>().map_err(|e| e.to_string())
}

fn parse_heads(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_arch(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (TOML, or JSON by extension).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// scaled-single, scaled-multi, paper-single or paper-multi.
    #[arg(long)]
    pub preset: Option<String>,
    /// Single-task run on this task (C, R, G[s], G[c], S[s], S[c]).
    #[arg(long, value_parser = parse_task, conflicts_with = "multi")]
    pub task: Option<Task>,
    /// Train on all six tasks with task tokens.
    #[arg(long)]
    pub multi: bool,
    /// Heads per layer, e.g. 1,1 or 1,4.
    #[arg(long, value_parser = parse_heads)]
    pub arch: Option<::std::vec::Vec<usize>>,
    /// label, sin or learned.
    #[arg(long, value_parser = parse_encoding)]
    pub encoding: Option<Encoding>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on this dataset file instead of regenerating the data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run id; defaults to a name derived from the configuration.
    #[arg(long)]
    pub run: Option<String>,
    /// Output root (else $LABELFORMER_OUT, else ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RunSelect {
    #[arg(long)]
    pub run: String,
    /// best, last or a step number.
    #[arg(long, default_value = "best")]
    pub ckpt: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub select: RunSelect,
    #[arg(long, value_parser = PROTOCOLS, default_value = "fig2")]
    pub protocol: String,
    /// Multiplier on the protocol's sequence counts.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Decoding modes: tf, rollout or both.
    #[arg(long, value_parser = ["tf", "rollout", "both"], default_value = "both")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub select: RunSelect,
    /// attn, gauss, sim, ablate, pca or all; repeatable.
    #[arg(long, value_delimiter = ',', default_value = "all", value_parser = analysis_names())]
    pub analysis: Vec<String>,
    /// Generalization sequences per task.
    #[arg(long, default_value_t = 200)]
    pub sequences: usize,
}

fn analysis_names() -> clap::builder::PossibleValuesParser {
    let mut v: Vec<&'static str> = ANALYSES.to_vec();
    v.push("all");
    clap::builder::PossibleValuesParser::new(v)
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub task: String,
    pub arch: String,
    pub encoding: String,
    pub d_model: usize,
    pub steps: u64,
    pub seed: u64,
    pub best_step: Option<u64>,
    pub train_item_accuracy: Option<f64>,
    pub train_label_accuracy: Option<f64>,
    pub gen_item_accuracy: Option<f64>,
    pub gen_label_accuracy: Option<f64>,
    pub gen_eos_accuracy: Option<f64>,
}

fn training_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut c = match (&a.config, &a.preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) if a.multi => ExperimentConfig::scaled_multi(vec![1, 4]),
        (None, None) => {
            ExperimentConfig::scaled_single(Task::SortShape, vec![1, 1], Encoding::Label)
        }
    };
    if a.multi {
        c.model.task_mode = TaskMode::Multi;
    }
    if let Some(t) = a.task {
        c.model.task_mode = TaskMode::Single;
        c.train.task = t;
    }
    if let Some(h) = &a.arch {
        c.model.heads = h.clone();
    }
    if let Some(e) = a.encoding {
        c.model.encoding = e;
    }
    if let Some(d) = a.d_model {
        c.model.d_model = d;
    }
    if let Some(s) = a.steps {
        c.train.steps = s;
    }
    if let Some(lr) = a.lr {
        c.train.learning_rate = lr;
    }
    if let Some(e) = a.eval_every {
        c.train.eval_every = e;
    }
    if let Some(s) = a.seed {
        c.train.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = DatasetSpec {
        seed: a.seed,
        n_sequences: a.n,
        min_len: a.min_len,
        max_len: a.max_len,
        label_range: a.label_range,
        train_max_len: a.train_max_len,
    };
    spec.validate()?;
    let records = generate_dataset(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let m = crate::dataset::write_dataset(&a.out, &spec, &records)?;
    println!(
        "{} sequences written to {} (sha256 {})",
        m.n,
        a.out.display(),
        m.sha256
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = training_config(a)?;
    let root = output_root(a.out.as_deref());
    let opts = TrainOptions {
        run_id: a.run.clone(),
        data_file: a.data.clone(),
        quiet: a.quiet,
    };
    let (run, _) = train_run(&root, &config, &opts)?;
    let m = &run.manifest;
    println!(
        "run {} finished: {} checkpoints, best step {}",
        m.run_id,
        m.checkpoints.len(),
        m.best_step.map_or_else(|| "-".into(), |s| s.to_string())
    );
    println!("{}", run.dir().display());
    Ok(())
}

fn open(sel: &RunSelect) -> Result<(Run, u64)> {
    let run = Run::open(&output_root(sel.out.as_deref()), &sel.run)?;
    let step = run.resolve_step(&sel.ckpt)?;
    Ok((run, step))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (mut run, step) = open(&a.select)?;
    let modes: &[DecodeMode] = match a.mode.as_str() {
        "tf" => &[DecodeMode::TeacherForcing],
        "rollout" => &[DecodeMode::Rollout],
        _ => &[DecodeMode::TeacherForcing, DecodeMode::Rollout],
    };
    for p in evaluate_run(&mut run, step, &a.protocol, a.scale, modes)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let (mut run, step) = open(&a.select)?;
    let opts = AnalysisOptions {
        step,
        sequences: a.sequences,
    };
    for p in run_analyses(&mut run, &a.analysis, opts)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn summary_row(run: &Run) -> Result<SummaryRow> {
    let m = &run.manifest;
    let c = &m.config;
    let metrics: Option<(MetricSummary, MetricSummary)> = match m.best_step {
        Some(s) => {
            let p = run.checkpoint_stem(s).with_extension("json");
            let cm: CheckpointManifest = serde_json::from_str(
                &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
            )?;
            cm.train.zip(cm.generalization)
        }
        None => None,
    };
    Ok(SummaryRow {
        run: m.run_id.clone(),
        task: match c.model.task_mode {
            TaskMode::Single => c.train.task.name().into(),
            TaskMode::Multi => "multi".into(),
        },
        arch: c
            .model
            .heads
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(","),
        encoding: c.model.encoding.name().into(),
        d_model: c.model.d_model,
        steps: c.train.steps,
        seed: c.train.seed,
        best_step: m.best_step,
        train_item_accuracy: metrics.map(|m| m.0.item_accuracy),
        train_label_accuracy: metrics.map(|m| m.0.label_accuracy),
        gen_item_accuracy: metrics.map(|m| m.1.item_accuracy),
        gen_label_accuracy: metrics.map(|m| m.1.label_accuracy),
        gen_eos_accuracy: metrics.map(|m| m.1.eos_accuracy),
    })
}

/// Collects every run directory under `root` into `summary.csv`.
pub fn write_summary(root: &Path) -> Result<(PathBuf, Vec<SummaryRow>)> {
    let mut ids: Vec<String> = Vec::new();
    if root.exists() {
        for entry in
            std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))?
        {
            let entry = entry?;
            if entry.path().join("manifest.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    let rows = ids
        .iter()
        .map(|id| summary_row(&Run::open(root, id)?))
        .collect::<Result<Vec<_>>>()?;
    let p = root.join("summary.csv");
    write_csv(&p, &rows)?;
    Ok((p, rows))
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let (p, rows) = write_summary(&output_root(a.out.as_deref()))?;
    println!("{} runs summarized in {}", rows.len(), p.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("labelformer").chain(args.iter().copied()))
    }

    #[test]
    fn unknown_values_are_usage_errors() {
        assert!(parse(&["train", "--task", "S[x]"]).is_err());
        assert!(parse(&["train", "--arch", "1,,4"]).is_err());
        assert!(parse(&["train", "--encoding", "rope"]).is_err());
        assert!(parse(&["eval", "--run", "r", "--protocol", "fig9"]).is_err());
        assert!(parse(&["analyze", "--run", "r", "--analysis", "saliency"]).is_err());
        assert_eq!(
            main_with_args(["labelformer", "train", "--task", "S[x]"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn overrides_apply_on_top_of_the_default() {
        let Command::Train(a) = parse(&[
            "train",
            "--task",
            "R",
            "--arch",
            "1",
            "--encoding",
            "sin",
            "--steps",
            "10",
        ])
        .unwrap()
        .command
        else {
            panic!()
        };
        let c = training_config(&a).unwrap();
        assert_eq!(c.train.task, Task::Reverse);
        assert_eq!(c.model.heads, vec![1]);
        assert_eq!(c.model.encoding, Encoding::Sinusoidal);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.model.task_mode, TaskMode::Single);
    }

    #[test]
    fn analysis_list_splits_on_commas() {
        let Command::Analyze(a) = parse(&["analyze", "--run", "r", "--analysis", "gauss,pca"])
            .unwrap()
            .command
        else {
            panic!()
        };
        assert_eq!(a.analysis, vec!["gauss", "pca"]);
        assert_eq!(a.select.ckpt, "best");
    }
}
