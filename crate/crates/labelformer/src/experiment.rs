//! Run directories: training with checkpoints, and loading runs back.
//!
//! Layout under the output root:
//!
//! ```text
//! <root>/<run>/config.toml
//! <root>/<run>/manifest.json
//! <root>/<run>/runlog.csv
//! <root>/<run>/checkpoints/step_<N>.{json,bin}
//! <root>/<run>/eval/...
//! <root>/analysis/<run>/...
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use labelformer_core::data::{
    generate_dataset, sample_eval_sequences, ContentIndex, SequenceRecord, Split,
};
use labelformer_core::eval::{
    episodes_for, model_tasks, protocol, run_protocol, sequence_thresholds, DecodeMode, EvalEpisode,
};
use labelformer_core::model::Model;
use labelformer_core::train::{train, EvalRecord, EvalSamples, RunLog, TrainObserver};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset;
use crate::report::{metric_rows, runlog_rows, write_csv, write_outcomes_jsonl};

pub const OUT_ENV: &str = "LABELFORMER_OUT";

/// `--out` if given, else `$LABELFORMER_OUT`, else `./runs`.
pub fn output_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
    }
}

/// Seeds derived from the configured training seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    /// Model initialization and batch order.
    pub train: u64,
    /// Checkpoint-selection samples: training-length and generalization.
    pub selection: (u64, u64),
    /// Evaluation protocols.
    pub protocol: u64,
    /// Sequences used by the analyses.
    pub analysis: u64,
}

impl Seeds {
    pub fn of(config: &ExperimentConfig) -> Self {
        let s = config.train.seed;
        Self {
            data: config.data.seed,
            train: s,
            selection: (
                s.wrapping_mul(4).wrapping_add(1),
                s.wrapping_mul(4).wrapping_add(2),
            ),
            protocol: s.wrapping_add(1000),
            analysis: s.wrapping_add(2000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: ExperimentConfig,
    /// External dataset file, when training did not regenerate the data.
    pub data_file: Option<PathBuf>,
    pub dataset_sha256: String,
    pub seeds: Seeds,
    pub parameter_count: usize,
    /// Checkpoint steps in order.
    pub checkpoints: Vec<u64>,
    pub best_step: Option<u64>,
    pub last_step: Option<u64>,
    /// Every emitted file, relative to the output root.
    pub artifacts: Vec<String>,
    pub train_seconds: Option<f64>,
}

pub struct Run {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.manifest.run_id)
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis").join(&self.manifest.run_id)
    }

    pub fn open(root: &Path, run_id: &str) -> Result<Self> {
        let p = root.join(run_id).join("manifest.json");
        let text =
            std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))?,
        })
    }

    pub fn save_manifest(&self) -> Result<()> {
        let p = self.dir().join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))
    }

    /// Records `path` (absolute or root-relative) as an artifact.
    pub fn add_artifact(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let s = rel.to_string_lossy().replace('\\', "/");
        if !self.manifest.artifacts.contains(&s) {
            self.manifest.artifacts.push(s);
            self.manifest.artifacts.sort();
        }
    }

    pub fn checkpoint_stem(&self, step: u64) -> PathBuf {
        self.dir().join("checkpoints").join(format!("step_{step}"))
    }

    /// Resolves `best`, `last` or a step number.
    pub fn resolve_step(&self, which: &str) -> Result<u64> {
        let m = &self.manifest;
        let step = match which {
            "best" => m.best_step,
            "last" => m.last_step,
            n => Some(
                n.parse::<u64>()
                    .with_context(|| format!("--ckpt expects best, last or a step, got {n:?}"))?,
            ),
        };
        match step {
            Some(s) if m.checkpoints.contains(&s) => Ok(s),
            Some(s) => bail!("run {} has no checkpoint at step {s}", m.run_id),
            None => bail!("run {} has no checkpoints", m.run_id),
        }
    }

    pub fn load_model(&self, step: u64) -> Result<Model> {
        Ok(checkpoint::load(&self.checkpoint_stem(step))?.0)
    }

    /// The training records, regenerated or re-read and checked against the
    /// recorded hash.
    pub fn training_records(&self) -> Result<Vec<SequenceRecord>> {
        let records = match &self.manifest.data_file {
            Some(p) => dataset::read_dataset(p)?.0,
            None => generate_dataset(&self.manifest.config.data)?,
        };
        if dataset::records_sha256(&records)? != self.manifest.dataset_sha256 {
            bail!(
                "training data for run {} no longer matches its recorded hash",
                self.manifest.run_id
            );
        }
        Ok(records)
    }

    /// `n` novel generalization-length sequences per task, for analyses.
    pub fn analysis_episodes(
        &self,
        model: &Model,
        exclude: &ContentIndex,
        n: usize,
    ) -> Result<Vec<EvalEpisode>> {
        let c = &self.manifest.config;
        let records = sample_eval_sequences(
            &c.sample_spec(Split::Generalization),
            n,
            self.manifest.seeds.analysis,
            exclude,
        )?;
        Ok(episodes_for(&records, &model_tasks(model, c.train.task)))
    }
}

/// Novel training-length and generalization samples for checkpoint
/// selection; every task sees the same sequences.
pub fn selection_samples(
    config: &ExperimentConfig,
    model: &Model,
    index: &ContentIndex,
) -> Result<EvalSamples> {
    let seeds = Seeds::of(config);
    let n = config.train.eval_sequences;
    let tasks = model_tasks(model, config.train.task);
    let tr = sample_eval_sequences(
        &config.sample_spec(Split::Train),
        n,
        seeds.selection.0,
        index,
    )?;
    let ge = sample_eval_sequences(
        &config.sample_spec(Split::Generalization),
        n,
        seeds.selection.1,
        index,
    )?;
    Ok(EvalSamples {
        train: episodes_for(&tr, &tasks),
        generalization: episodes_for(&ge, &tasks),
    })
}

struct CheckpointWriter<'a> {
    run: &'a mut Run,
    log: RunLog,
    started: Instant,
    quiet: bool,
}

impl TrainObserver for CheckpointWriter<'_> {
    type Error = anyhow::Error;

    fn on_eval(&mut self, model: &Model, record: &EvalRecord) -> Result<Option<String>> {
        let stem = self.run.checkpoint_stem(record.step);
        checkpoint::save(
            &stem,
            model,
            record.step,
            Some((record.train, record.generalization)),
        )?;
        let (json, bin) = checkpoint::paths(&stem);
        self.run.add_artifact(&json);
        self.run.add_artifact(&bin);
        self.run.manifest.checkpoints.push(record.step);
        self.run.manifest.last_step = Some(record.step);
        let mut r = record.clone();
        r.checkpoint = Some(format!("checkpoints/step_{}", record.step));
        let checkpoint = r.checkpoint.clone();
        self.log.records.push(r);
        self.run.manifest.best_step = self.log.best().map(|i| self.log.records[i].step);
        let runlog = self.run.dir().join("runlog.csv");
        write_csv(&runlog, &runlog_rows(&self.log))?;
        self.run.add_artifact(&runlog);
        self.run.save_manifest()?;
        if !self.quiet {
            eprintln!(
                "step {:>6} {:>8.1}s loss {:.4} train item {:.4} label {:.4} gen item {:.4} label {:.4} eos {:.3}",
                record.step,
                self.started.elapsed().as_secs_f64(),
                record.train_loss,
                record.train.item_accuracy,
                record.train.label_accuracy,
                record.generalization.item_accuracy,
                record.generalization.label_accuracy,
                record.generalization.eos_accuracy,
            );
        }
        Ok(checkpoint)
    }
}

/// Options for [`train_run`] beyond the configuration itself.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub run_id: Option<String>,
    pub data_file: Option<PathBuf>,
    pub quiet: bool,
}

/// Trains a fresh run under `root`, replacing any previous run of the
/// same id.
pub fn train_run(
    root: &Path,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<(Run, RunLog)> {
    config.validate()?;
    let records = match &opts.data_file {
        Some(p) => {
            let (records, manifest) = dataset::read_dataset(p)?;
            if let Some(m) = manifest {
                if m.label_range != config.data.label_range {
                    bail!(
                        "{} was generated with label range {}, the config uses {}",
                        p.display(),
                        m.label_range,
                        config.data.label_range
                    );
                }
            }
            records
        }
        None => generate_dataset(&config.data)?,
    };
    let run_id = opts.run_id.clone().unwrap_or_else(|| config.run_name());
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
        bail!("invalid run id {run_id:?}");
    }
    let mut model = Model::new(config.model.clone(), config.train.seed)?;
    let mut run = Run {
        root: root.to_path_buf(),
        manifest: RunManifest {
            run_id,
            config: config.clone(),
            data_file: opts.data_file.clone(),
            dataset_sha256: dataset::records_sha256(&records)?,
            seeds: Seeds::of(config),
            parameter_count: model.params.count(),
            checkpoints: Vec::new(),
            best_step: None,
            last_step: None,
            artifacts: Vec::new(),
            train_seconds: None,
        },
    };
    let dir = run.dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, toml::to_string(config)?)?;
    run.add_artifact(&cfg_path);
    run.add_artifact(&dir.join("manifest.json"));
    run.save_manifest()?;

    let index = ContentIndex::new(&records);
    let samples = selection_samples(config, &model, &index)?;
    let started = Instant::now();
    let mut writer = CheckpointWriter {
        run: &mut run,
        log: RunLog::default(),
        started,
        quiet: opts.quiet,
    };
    let log = train(&mut model, &records, &samples, &config.train, &mut writer)?;
    run.manifest.train_seconds = Some(started.elapsed().as_secs_f64());
    run.save_manifest()?;
    Ok((run, log))
}

pub const THRESHOLDS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub protocol: String,
    pub set: String,
    pub task: String,
    pub mode: String,
    pub threshold: f64,
    pub rate: f64,
}

/// Runs an evaluation protocol on one checkpoint. Writes
/// `eval/<protocol>_step<N>.csv`, `..._thresholds.csv` and
/// `..._outcomes.jsonl` under the run directory; returns their paths.
pub fn evaluate_run(
    run: &mut Run,
    step: u64,
    protocol_id: &str,
    scale: f64,
    modes: &[DecodeMode],
) -> Result<Vec<PathBuf>> {
    let model = run.load_model(step)?;
    let config = run.manifest.config.clone();
    let regime = config.regime();
    let p = protocol(
        protocol_id,
        scale,
        &regime,
        &model_tasks(&model, config.train.task),
    )?;
    let index = ContentIndex::new(&run.training_records()?);
    let results = run_protocol(
        &model,
        &p,
        &regime,
        &index,
        run.manifest.seeds.protocol,
        modes,
    )?;

    let mut thresholds = Vec::new();
    for r in &results {
        let mut groups: Vec<(String, Vec<_>)> = vec![("all".into(), r.outcomes.clone())];
        let tasks: Vec<_> = labelformer_core::tasks::Task::ALL
            .into_iter()
            .filter(|t| r.outcomes.iter().any(|o| o.task == *t))
            .collect();
        if tasks.len() > 1 {
            for t in tasks {
                groups.push((
                    t.name().into(),
                    r.outcomes.iter().filter(|o| o.task == t).cloned().collect(),
                ));
            }
        }
        for (task, outcomes) in groups {
            for (threshold, rate) in sequence_thresholds(&outcomes, &THRESHOLDS)? {
                thresholds.push(ThresholdRow {
                    protocol: protocol_id.into(),
                    set: r.set.clone(),
                    task: task.clone(),
                    mode: r.report.mode.name().into(),
                    threshold,
                    rate,
                });
            }
        }
    }

    let dir = run.dir().join("eval");
    std::fs::create_dir_all(&dir)?;
    let base = format!("{protocol_id}_step{step}");
    let metrics = dir.join(format!("{base}.csv"));
    write_csv(&metrics, &metric_rows(protocol_id, &results)?)?;
    let th = dir.join(format!("{base}_thresholds.csv"));
    write_csv(&th, &thresholds)?;
    let outcomes = dir.join(format!("{base}_outcomes.jsonl"));
    write_outcomes_jsonl(&outcomes, &results)?;
    let written = vec![metrics, th, outcomes];
    for w in &written {
        run.add_artifact(w);
    }
    run.save_manifest()?;
    Ok(written)
}
