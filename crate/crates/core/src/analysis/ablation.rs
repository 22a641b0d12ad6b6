//! Accuracy under attention ablations.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{eval_rollout, eval_teacher_forcing, DecodeMode, EvalEpisode, MetricReport};
use crate::model::{AblationSpec, KeepSet, Model, ModelConfig};
use crate::tasks::Task;

/// Baseline, every single-head drop, every whole-layer drop, and the
/// token-preserve rules on the first two layers.
pub fn canonical_specs(config: &ModelConfig) -> Vec<AblationSpec> {
    let mut specs = vec![AblationSpec::none()];
    for (l, &heads) in config.heads.iter().enumerate() {
        for h in 0..heads {
            specs.push(AblationSpec::drop_head(l, h));
        }
        if heads > 1 {
            specs.push(AblationSpec::drop_layer(config, l));
        }
    }
    specs.push(AblationSpec::preserve(vec![(0, KeepSet::TASK)]));
    if config.n_layers() > 1 {
        specs.push(AblationSpec::preserve(vec![(1, KeepSet::NEXT)]));
        specs.push(AblationSpec::preserve(vec![
            (0, KeepSet::TASK),
            (1, KeepSet::NEXT),
        ]));
    }
    specs.push(AblationSpec::preserve(vec![(0, KeepSet::ALL)]));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: String,
    pub task: Task,
    pub mode: DecodeMode,
    pub n_sequences: usize,
    pub item_accuracy: f64,
    pub label_accuracy: f64,
    pub eos_accuracy: f64,
    pub task_accuracy: Option<f64>,
    pub seq_exact: f64,
}

impl AblationRow {
    fn new(spec: &AblationSpec, task: Task, r: &MetricReport) -> Self {
        Self {
            spec: spec.name(),
            task,
            mode: r.mode,
            n_sequences: r.n_sequences,
            item_accuracy: r.item_accuracy,
            label_accuracy: r.label_accuracy,
            eos_accuracy: r.eos_accuracy,
            task_accuracy: r.task_accuracy,
            seq_exact: r.seq_exact,
        }
    }

    pub fn token_accuracy(&self) -> f64 {
        0.5 * (self.item_accuracy + self.label_accuracy)
    }
}

/// Evaluates every spec under both decoding modes, one row per
/// (spec, task present in `episodes`, mode).
pub fn ablation_sweep(
    model: &Model,
    episodes: &[EvalEpisode],
    specs: &[AblationSpec],
) -> Result<Vec<AblationRow>> {
    for s in specs {
        s.validate(&model.config)?;
    }
    let by_task: Vec<(Task, Vec<EvalEpisode>)> = Task::ALL
        .iter()
        .map(|&t| {
            (
                t,
                episodes
                    .iter()
                    .filter(|e| e.episode.task == t)
                    .cloned()
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, e)| !e.is_empty())
        .collect();
    let mut rows = Vec::with_capacity(specs.len() * by_task.len() * 2);
    for spec in specs {
        for (task, eps) in &by_task {
            let (tf, _) = eval_teacher_forcing(model, eps, spec)?;
            rows.push(AblationRow::new(spec, *task, &tf));
            let (ro, _) = eval_rollout(model, eps, spec)?;
            rows.push(AblationRow::new(spec, *task, &ro));
        }
    }
    Ok(rows)
}
