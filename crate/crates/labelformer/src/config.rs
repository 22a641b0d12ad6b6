//! Experiment configuration files and presets.

use std::path::Path;

use anyhow::{bail, Context, Result};
use labelformer_core::data::{DatasetSpec, SampleSpec, Split};
use labelformer_core::eval::LengthRegime;
use labelformer_core::model::{Encoding, ModelConfig};
use labelformer_core::tasks::Task;
use labelformer_core::tokens::TaskMode;
use labelformer_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Lengths of held-out generalization sequences. Training-length
    /// sequences span the dataset's training split.
    pub generalization_lengths: (usize, usize),
}

impl ExperimentConfig {
    /// Single-task sort at the scaled-down size: 8k sequences of length
    /// 5-15, generalization on 16-25, d_model 64 (92 for one layer, the
    /// full-size 128:184 ratio).
    pub fn scaled_single(task: Task, heads: Vec<usize>, encoding: Encoding) -> Self {
        let d_model = if heads.len() == 1 { 92 } else { 64 };
        Self {
            data: DatasetSpec {
                seed: 0,
                n_sequences: 8000,
                min_len: 5,
                max_len: 15,
                label_range: 25,
                train_max_len: 15,
            },
            model: ModelConfig::new(heads, d_model, encoding, TaskMode::Single),
            train: TrainConfig {
                steps: 8000,
                learning_rate: 1e-3,
                task,
                eval_sequences: 300,
                ..TrainConfig::default()
            },
            generalization_lengths: (16, 25),
        }
    }

    /// Six-task version of [`Self::scaled_single`] with d_model 96.
    pub fn scaled_multi(heads: Vec<usize>) -> Self {
        let mut c = Self::scaled_single(Task::SortShape, heads, Encoding::Label);
        c.model.d_model = 96;
        c.model.task_mode = TaskMode::Multi;
        c.train.steps = 15_000;
        c.train.eval_every = 1000;
        c
    }

    /// Full-size single-task setup: 100k sequences of length 5-50 split at
    /// 25, d_model 128 (184 for one layer), 32k steps at learning rate 1e-4.
    pub fn paper_single(task: Task, heads: Vec<usize>, encoding: Encoding) -> Self {
        let d_model = if heads.len() == 1 { 184 } else { 128 };
        Self {
            data: DatasetSpec::default(),
            model: ModelConfig::new(heads, d_model, encoding, TaskMode::Single),
            train: TrainConfig {
                task,
                ..TrainConfig::default()
            },
            generalization_lengths: (26, 50),
        }
    }

    /// Full-size multi-task setup: d_model 192, 38k steps at 5e-4.
    pub fn paper_multi(heads: Vec<usize>) -> Self {
        let mut c = Self::paper_single(Task::SortShape, heads, Encoding::Label);
        c.model.d_model = 192;
        c.model.task_mode = TaskMode::Multi;
        c.train.steps = 38_000;
        c.train.learning_rate = 5e-4;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "scaled-single" => Self::scaled_single(Task::SortShape, vec![1, 1], Encoding::Label),
            "scaled-multi" => Self::scaled_multi(vec![1, 4]),
            "paper-single" => Self::paper_single(Task::SortShape, vec![1, 1], Encoding::Label),
            "paper-multi" => Self::paper_multi(vec![1, 4]),
            other => bail!(
                "unknown preset {other:?} (scaled-single, scaled-multi, paper-single, paper-multi)"
            ),
        })
    }

    /// Reads TOML or JSON, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let (lo, hi) = self.generalization_lengths;
        if lo == 0 || lo > hi {
            bail!("invalid generalization lengths {lo}..={hi}");
        }
        if hi > self.data.label_range {
            bail!(
                "generalization length {hi} exceeds the label range {}",
                self.data.label_range
            );
        }
        if self.model.encoding != Encoding::Sinusoidal
            && self.model.code_vocab < self.data.label_range.max(hi)
        {
            bail!(
                "order-code table of {} entries cannot hold codes up to {}",
                self.model.code_vocab,
                self.data.label_range.max(hi) - 1
            );
        }
        Ok(())
    }

    pub fn regime(&self) -> LengthRegime {
        LengthRegime {
            train: (
                self.data.min_len,
                self.data.train_max_len.min(self.data.max_len),
            ),
            generalization: self.generalization_lengths,
            label_range: self.data.label_range,
        }
    }

    pub fn sample_spec(&self, split: Split) -> SampleSpec {
        let r = self.regime();
        let (min_len, max_len) = match split {
            Split::Train => r.train,
            Split::Generalization => r.generalization,
        };
        SampleSpec {
            min_len,
            max_len,
            label_range: r.label_range,
            split,
        }
    }

    /// Default run name, e.g. `Ss-1x1-label-d64-s0`.
    pub fn run_name(&self) -> String {
        let arch = self
            .model
            .heads
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let what = match self.model.task_mode {
            TaskMode::Single => self.train.task.name().replace(['[', ']'], ""),
            TaskMode::Multi => "multi".into(),
        };
        format!(
            "{what}-{arch}-{}-d{}-s{}",
            self.model.encoding.name(),
            self.model.d_model,
            self.train.seed
        )
    }
}

/// Parses `1,4` into per-layer head counts.
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let heads: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| {
            format!("invalid architecture {s:?}; expected comma-separated head counts like 1,4")
        })?;
    if heads.is_empty() || heads.contains(&0) {
        bail!("invalid architecture {s:?}; every layer needs at least one head");
    }
    Ok(heads)
}
