//! CSV and JSON-lines outputs for training logs and metric reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use labelformer_core::eval::{summarize, DecodeMode, MetricReport, ProtocolResult, TokenOutcome};
use labelformer_core::tasks::Task;
use labelformer_core::train::{MetricSummary, RunLog};
use serde::{Deserialize, Serialize};

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub step: u64,
    /// `train` or `generalization`.
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn runlog_rows(log: &RunLog) -> Vec<RunLogRow> {
    let mut rows = Vec::new();
    for r in &log.records {
        rows.push(RunLogRow {
            step: r.step,
            split: "train".into(),
            metric: "loss".into(),
            value: r.train_loss,
        });
        for (split, m) in [("train", &r.train), ("generalization", &r.generalization)] {
            for (metric, value) in summary_metrics(m) {
                rows.push(RunLogRow {
                    step: r.step,
                    split: split.into(),
                    metric: metric.into(),
                    value,
                });
            }
        }
    }
    rows
}

fn summary_metrics(m: &MetricSummary) -> [(&'static str, f64); 4] {
    [
        ("item_accuracy", m.item_accuracy),
        ("label_accuracy", m.label_accuracy),
        ("token_accuracy", m.token_accuracy()),
        ("eos_accuracy", m.eos_accuracy),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCsvRow {
    pub protocol: String,
    /// Evaluation set within the protocol (`train-length`, `generalization`).
    pub set: String,
    /// Task name, or `all` for the pooled report.
    pub task: String,
    pub mode: String,
    pub slice_type: String,
    pub slice_value: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

fn push_report(
    out: &mut Vec<MetricCsvRow>,
    protocol: &str,
    set: &str,
    task: &str,
    r: &MetricReport,
) {
    for row in r.rows() {
        out.push(MetricCsvRow {
            protocol: protocol.into(),
            set: set.into(),
            task: task.into(),
            mode: r.mode.name().into(),
            slice_type: row.slice_type,
            slice_value: row.slice_value,
            metric: row.metric,
            value: row.value,
            n: row.n,
        });
    }
}

/// Pooled rows for every result, plus per-task rows when several tasks are
/// present.
pub fn metric_rows(protocol: &str, results: &[ProtocolResult]) -> Result<Vec<MetricCsvRow>> {
    let mut out = Vec::new();
    for res in results {
        push_report(&mut out, protocol, &res.set, "all", &res.report);
        let tasks: Vec<Task> = Task::ALL
            .into_iter()
            .filter(|t| res.outcomes.iter().any(|o| o.task == *t))
            .collect();
        if tasks.len() > 1 {
            for t in tasks {
                let sub: Vec<TokenOutcome> = res
                    .outcomes
                    .iter()
                    .filter(|o| o.task == t)
                    .cloned()
                    .collect();
                push_report(
                    &mut out,
                    protocol,
                    &res.set,
                    t.name(),
                    &summarize(res.report.mode, &sub)?,
                );
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct OutcomeLine<'a> {
    set: &'a str,
    mode: DecodeMode,
    #[serde(flatten)]
    outcome: &'a TokenOutcome,
}

pub fn write_outcomes_jsonl(path: &Path, results: &[ProtocolResult]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in results {
        for o in &r.outcomes {
            let line = OutcomeLine {
                set: &r.set,
                mode: r.report.mode,
                outcome: o,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
    }
    w.flush()?;
    Ok(())
}
