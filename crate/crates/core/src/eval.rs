//! Teacher-forced and greedy-rollout evaluation with metric breakdowns.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{sample_eval_sequences, ContentIndex, SampleSpec, SequenceRecord, Split};
use crate::error::{Error, Result};
use crate::model::{argmax, argmax_features, AblationSpec, Model, Readouts, CONTINUE_CLASS};
use crate::tasks::{Control, Item, Task};
use crate::tokens::{encode_tokens, Episode, Stream, TaskMode, Token};

/// Streams per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;
/// Rollouts stop after this many tokens beyond the target length.
pub const ROLLOUT_SLACK: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[serde(rename = "tf")]
    TeacherForcing,
    Rollout,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::TeacherForcing => "tf",
            DecodeMode::Rollout => "rollout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Item,
    Eos,
    Task,
    /// Emitted by a rollout past the end of the target.
    Spurious,
}

/// Scoring of one output token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOutcome {
    pub seq_id: u64,
    pub task: Task,
    pub seq_len: usize,
    /// Output item index for item (and spurious) tokens; output step for
    /// control tokens.
    pub position: usize,
    pub kind: TargetKind,
    pub features_correct: u8,
    pub label_correct: bool,
    pub control_correct: Option<bool>,
}

impl TokenOutcome {
    pub fn is_item(&self) -> bool {
        matches!(self.kind, TargetKind::Item | TargetKind::Spurious)
    }

    /// All three features and the label are right.
    pub fn fully_correct(&self) -> bool {
        self.features_correct == 3 && self.label_correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub value: String,
    pub n_tokens: usize,
    pub item_accuracy: f64,
    pub label_accuracy: f64,
    pub eos_accuracy: Option<f64>,
    pub n_sequences: usize,
    pub seq_exact: Option<f64>,
    pub seq_95: Option<f64>,
    pub seq_90: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: DecodeMode,
    pub n_sequences: usize,
    pub n_item_tokens: usize,
    pub item_accuracy: f64,
    pub label_accuracy: f64,
    pub eos_accuracy: f64,
    pub task_accuracy: Option<f64>,
    pub seq_exact: f64,
    pub seq_95: f64,
    pub seq_90: f64,
    pub by_length: Vec<SliceMetrics>,
    pub by_position: Vec<SliceMetrics>,
    pub by_task: Vec<SliceMetrics>,
}

/// One row of the long-format metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub slice_type: String,
    pub slice_value: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

fn mean_item(out: &[&TokenOutcome]) -> (f64, f64, usize) {
    let items: Vec<_> = out.iter().filter(|o| o.is_item()).collect();
    if items.is_empty() {
        return (0.0, 0.0, 0);
    }
    let n = items.len() as f64;
    let f = items
        .iter()
        .map(|o| o.features_correct as f64 / 3.0)
        .sum::<f64>()
        / n;
    let l = items.iter().filter(|o| o.label_correct).count() as f64 / n;
    (f, l, items.len())
}

fn control_rate(out: &[&TokenOutcome], kind: TargetKind) -> Option<f64> {
    let c: Vec<_> = out.iter().filter(|o| o.kind == kind).collect();
    if c.is_empty() {
        return None;
    }
    Some(c.iter().filter(|o| o.control_correct == Some(true)).count() as f64 / c.len() as f64)
}

/// Fraction of sequences whose share of fully correct item tokens reaches
/// each threshold.
pub fn sequence_thresholds(
    outcomes: &[TokenOutcome],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let refs: Vec<&TokenOutcome> = outcomes.iter().collect();
    thresholds_of(&refs, thresholds)
}

fn thresholds_of(outcomes: &[&TokenOutcome], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut per_seq: BTreeMap<(u64, Task), (usize, usize)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.is_item()) {
        let e = per_seq.entry((o.seq_id, o.task)).or_default();
        e.0 += usize::from(o.fully_correct());
        e.1 += 1;
    }
    if per_seq.is_empty() {
        return Err(Error::Degenerate("no item outcomes to threshold".into()));
    }
    let n = per_seq.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = per_seq
                .values()
                .filter(|(ok, tot)| *ok as f64 / *tot as f64 >= t - 1e-12)
                .count();
            (t, hits as f64 / n)
        })
        .collect())
}

fn slice(value: String, out: &[&TokenOutcome], with_sequences: bool) -> SliceMetrics {
    let (item, label, n) = mean_item(out);
    let seqs = if with_sequences {
        thresholds_of(out, &[1.0, 0.95, 0.90]).ok()
    } else {
        None
    };
    let n_sequences = out
        .iter()
        .map(|o| (o.seq_id, o.task))
        .collect::<alloc::collections::BTreeSet<_>>()
        .len();
    SliceMetrics {
        value,
        n_tokens: n,
        item_accuracy: item,
        label_accuracy: label,
        eos_accuracy: control_rate(out, TargetKind::Eos),
        n_sequences,
        seq_exact: seqs.as_ref().map(|s| s[0].1),
        seq_95: seqs.as_ref().map(|s| s[1].1),
        seq_90: seqs.as_ref().map(|s| s[2].1),
    }
}

/// Aggregates raw outcomes into a report.
pub fn summarize(mode: DecodeMode, outcomes: &[TokenOutcome]) -> Result<MetricReport> {
    let all: Vec<&TokenOutcome> = outcomes.iter().collect();
    let (item, label, n_items) = mean_item(&all);
    if n_items == 0 {
        return Err(Error::Degenerate("no item outcomes to summarize".into()));
    }
    let th = thresholds_of(&all, &[1.0, 0.95, 0.90])?;
    let n_sequences = all
        .iter()
        .map(|o| (o.seq_id, o.task))
        .collect::<alloc::collections::BTreeSet<_>>()
        .len();

    let mut by_len: BTreeMap<usize, Vec<&TokenOutcome>> = BTreeMap::new();
    let mut by_pos: BTreeMap<usize, Vec<&TokenOutcome>> = BTreeMap::new();
    let mut by_task: BTreeMap<Task, Vec<&TokenOutcome>> = BTreeMap::new();
    for o in &all {
        by_len.entry(o.seq_len).or_default().push(o);
        if o.is_item() {
            by_pos.entry(o.position).or_default().push(o);
        }
        by_task.entry(o.task).or_default().push(o);
    }
    Ok(MetricReport {
        mode,
        n_sequences,
        n_item_tokens: n_items,
        item_accuracy: item,
        label_accuracy: label,
        eos_accuracy: control_rate(&all, TargetKind::Eos).unwrap_or(0.0),
        task_accuracy: control_rate(&all, TargetKind::Task),
        seq_exact: th[0].1,
        seq_95: th[1].1,
        seq_90: th[2].1,
        by_length: by_len
            .into_iter()
            .map(|(k, v)| slice(k.to_string(), &v, true))
            .collect(),
        by_position: by_pos
            .into_iter()
            .map(|(k, v)| slice(k.to_string(), &v, false))
            .collect(),
        by_task: by_task
            .into_iter()
            .map(|(k, v)| slice(k.name().to_string(), &v, true))
            .collect(),
    })
}

impl MetricReport {
    /// Mean of item and label token accuracy; the checkpoint selection key.
    pub fn token_accuracy(&self) -> f64 {
        0.5 * (self.item_accuracy + self.label_accuracy)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        let mut push = |st: &str, sv: &str, m: &str, v: f64, n: usize| {
            rows.push(MetricRow {
                slice_type: st.into(),
                slice_value: sv.into(),
                metric: m.into(),
                value: v,
                n,
            })
        };
        let n = self.n_item_tokens;
        push("all", "all", "item_accuracy", self.item_accuracy, n);
        push("all", "all", "label_accuracy", self.label_accuracy, n);
        push(
            "all",
            "all",
            "eos_accuracy",
            self.eos_accuracy,
            self.n_sequences,
        );
        if let Some(t) = self.task_accuracy {
            push("all", "all", "task_accuracy", t, self.n_sequences);
        }
        push("all", "all", "seq_exact", self.seq_exact, self.n_sequences);
        push("all", "all", "seq_95", self.seq_95, self.n_sequences);
        push("all", "all", "seq_90", self.seq_90, self.n_sequences);
        for (kind, slices) in [
            ("length", &self.by_length),
            ("position", &self.by_position),
            ("task", &self.by_task),
        ] {
            for s in slices {
                push(kind, &s.value, "item_accuracy", s.item_accuracy, s.n_tokens);
                push(
                    kind,
                    &s.value,
                    "label_accuracy",
                    s.label_accuracy,
                    s.n_tokens,
                );
                if let Some(e) = s.eos_accuracy {
                    push(kind, &s.value, "eos_accuracy", e, s.n_sequences);
                }
                for (m, v) in [
                    ("seq_exact", s.seq_exact),
                    ("seq_95", s.seq_95),
                    ("seq_90", s.seq_90),
                ] {
                    if let Some(v) = v {
                        push(kind, &s.value, m, v, s.n_sequences);
                    }
                }
            }
        }
        rows
    }
}

/// An episode together with the identity it is reported under.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub seq_id: u64,
    pub episode: Episode,
}

pub fn episodes_for(records: &[SequenceRecord], tasks: &[Task]) -> Vec<EvalEpisode> {
    let mut out = Vec::with_capacity(records.len() * tasks.len());
    for &t in tasks {
        for r in records {
            out.push(EvalEpisode {
                seq_id: r.id,
                episode: Episode::new(t, r.items.clone()),
            });
        }
    }
    out
}

fn score_item(
    seq: &EvalEpisode,
    position: usize,
    predicted: Option<(Item, u8)>,
    truth: (Item, u8),
) -> TokenOutcome {
    let (features_correct, label_correct) = match predicted {
        Some((item, code)) => {
            let fc = item
                .features()
                .iter()
                .zip(truth.0.features())
                .filter(|(a, b)| **a == *b)
                .count() as u8;
            (fc, code == truth.1)
        }
        None => (0, false),
    };
    TokenOutcome {
        seq_id: seq.seq_id,
        task: seq.episode.task,
        seq_len: seq.episode.len(),
        position,
        kind: TargetKind::Item,
        features_correct,
        label_correct,
        control_correct: None,
    }
}

fn decode(item_logits: &[f64], label_logits: &[f64], control_logits: &[f64]) -> Token {
    let c = argmax(control_logits);
    if c == CONTINUE_CLASS {
        Token::Item {
            item: Item::from_features(argmax_features(item_logits)),
            code: argmax(label_logits) as u8,
        }
    } else {
        Token::Control(Control::from_index(c).expect("control class"))
    }
}

fn score(
    seq: &EvalEpisode,
    stream: &Stream,
    produced: &[Token],
    spurious_items: bool,
) -> Vec<TokenOutcome> {
    let lead = usize::from(matches!(
        stream.targets.first(),
        Some(Token::Control(Control::Task(_)))
    ));
    let mut out = Vec::with_capacity(stream.targets.len());
    for (r, truth) in stream.targets.iter().enumerate() {
        let got = produced.get(r).copied();
        match *truth {
            Token::Item { item, code } => {
                out.push(score_item(
                    seq,
                    r - lead,
                    got.and_then(|t| t.item()),
                    (item, code),
                ));
            }
            Token::Control(c) => out.push(TokenOutcome {
                seq_id: seq.seq_id,
                task: seq.episode.task,
                seq_len: seq.episode.len(),
                position: r,
                kind: if c == Control::Eos {
                    TargetKind::Eos
                } else {
                    TargetKind::Task
                },
                features_correct: 0,
                label_correct: false,
                control_correct: Some(got == Some(*truth)),
            }),
        }
    }
    if spurious_items {
        for r in stream.targets.len()..produced.len() {
            if matches!(produced[r], Token::Item { .. }) {
                let mut o = score_item(seq, r - lead, None, (Item::from_features([0; 3]), 0));
                o.kind = TargetKind::Spurious;
                out.push(o);
            }
        }
    }
    out
}

fn streams_for(model: &Model, episodes: &[EvalEpisode]) -> Result<Vec<Stream>> {
    episodes
        .iter()
        .map(|e| {
            encode_tokens(
                &e.episode,
                model.config.task_mode,
                model.config.encoding.order_code(),
            )
            .map(|enc| enc.teacher_forced())
        })
        .collect()
}

/// Token outcomes with ground-truth inputs at every step.
pub fn teacher_forcing_outcomes(
    model: &Model,
    episodes: &[EvalEpisode],
    ablation: &AblationSpec,
) -> Result<Vec<TokenOutcome>> {
    let streams = streams_for(model, episodes)?;
    let mut outcomes = Vec::new();
    for (chunk_eps, chunk) in episodes.chunks(EVAL_CHUNK).zip(streams.chunks(EVAL_CHUNK)) {
        let refs: Vec<&Stream> = chunk.iter().collect();
        let out = model.forward(&refs, ablation, Readouts::Outputs, false)?;
        for (i, s) in chunk.iter().enumerate() {
            let span = out.readout_spans[i].clone();
            let produced: Vec<Token> = span
                .map(|r| {
                    let (a, b, c) = out.logits(r);
                    decode(a, b, c)
                })
                .collect();
            // Under teacher forcing an item target is scored on its feature
            // and label readouts even if the control head disagrees.
            let forced: Vec<Token> = produced
                .iter()
                .zip(&s.targets)
                .zip(out.readout_spans[i].clone())
                .map(|((p, t), r)| match t {
                    Token::Item { .. } => {
                        let (a, b, _) = out.logits(r);
                        Token::Item {
                            item: Item::from_features(argmax_features(a)),
                            code: argmax(b) as u8,
                        }
                    }
                    Token::Control(_) => *p,
                })
                .collect();
            outcomes.extend(score(&chunk_eps[i], s, &forced, false));
        }
    }
    Ok(outcomes)
}

pub fn eval_teacher_forcing(
    model: &Model,
    episodes: &[EvalEpisode],
    ablation: &AblationSpec,
) -> Result<(MetricReport, Vec<TokenOutcome>)> {
    let outcomes = teacher_forcing_outcomes(model, episodes, ablation)?;
    Ok((summarize(DecodeMode::TeacherForcing, &outcomes)?, outcomes))
}

/// Greedy decoding outputs for each episode.
pub fn rollout_tokens(
    model: &Model,
    episodes: &[EvalEpisode],
    ablation: &AblationSpec,
) -> Result<Vec<Vec<Token>>> {
    let streams = streams_for(model, episodes)?;
    let mut produced: Vec<Vec<Token>> = vec![Vec::new(); episodes.len()];
    for (c, chunk) in streams.chunks(EVAL_CHUNK).enumerate() {
        let base = c * EVAL_CHUNK;
        let mut live: Vec<Stream> = chunk
            .iter()
            .map(|s| {
                let mut r = s.clone();
                r.tokens.truncate(s.first_readout + 1);
                r
            })
            .collect();
        let mut active: Vec<usize> = (0..live.len()).collect();
        while !active.is_empty() {
            let refs: Vec<&Stream> = active.iter().map(|&i| &live[i]).collect();
            let out = model.forward(&refs, ablation, Readouts::Outputs, false)?;
            let mut still = Vec::with_capacity(active.len());
            for (j, &i) in active.iter().enumerate() {
                let r = out.readout_spans[j].end - 1;
                let (a, b, cl) = out.logits(r);
                let tok = decode(a, b, cl);
                let gen = &mut produced[base + i];
                gen.push(tok);
                let cap = live[i].targets.len() + ROLLOUT_SLACK;
                if tok != Token::Control(Control::Eos) && gen.len() < cap {
                    live[i].tokens.push(tok);
                    still.push(i);
                }
            }
            active = still;
        }
    }
    Ok(produced)
}

/// Token outcomes under greedy decoding, aligned with the target by
/// position. Missing or extra tokens count as errors.
pub fn rollout_outcomes(
    model: &Model,
    episodes: &[EvalEpisode],
    ablation: &AblationSpec,
) -> Result<Vec<TokenOutcome>> {
    let streams = streams_for(model, episodes)?;
    let produced = rollout_tokens(model, episodes, ablation)?;
    let mut outcomes = Vec::new();
    for ((e, s), p) in episodes.iter().zip(&streams).zip(&produced) {
        outcomes.extend(score(e, s, p, true));
    }
    Ok(outcomes)
}

pub fn eval_rollout(
    model: &Model,
    episodes: &[EvalEpisode],
    ablation: &AblationSpec,
) -> Result<(MetricReport, Vec<TokenOutcome>)> {
    let outcomes = rollout_outcomes(model, episodes, ablation)?;
    Ok((summarize(DecodeMode::Rollout, &outcomes)?, outcomes))
}

/// Length ranges that separate training-length from generalization
/// sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRegime {
    pub train: (usize, usize),
    pub generalization: (usize, usize),
    pub label_range: usize,
}

impl Default for LengthRegime {
    fn default() -> Self {
        Self {
            train: (5, 25),
            generalization: (26, 50),
            label_range: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub name: String,
    pub split: Split,
    pub tasks: Vec<Task>,
    /// Sequences sampled per task.
    pub per_task: usize,
    pub lengths: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub id: String,
    pub sets: Vec<EvalSet>,
}

pub const PROTOCOLS: [&str; 3] = ["fig2", "fig5A", "fig6"];

fn scaled(n: usize, scale: f64) -> usize {
    let v = (n as f64 * scale + 0.5) as usize;
    v.max(1)
}

/// Builds a named protocol. `fig2` evaluates a single-task model on 5k
/// novel training-length and 5k generalization sequences; `fig5A` uses
/// 12.5k generalization sequences per task; `fig6` uses 1k of each length
/// regime per task. Counts are multiplied by `scale`.
pub fn protocol(id: &str, scale: f64, regime: &LengthRegime, tasks: &[Task]) -> Result<Protocol> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let set = |name: &str, split: Split, n: usize| EvalSet {
        name: name.into(),
        split,
        tasks: tasks.to_vec(),
        per_task: scaled(n, scale),
        lengths: match split {
            Split::Train => regime.train,
            Split::Generalization => regime.generalization,
        },
    };
    let sets = match id {
        "fig2" => vec![
            set("train-length", Split::Train, 5000),
            set("generalization", Split::Generalization, 5000),
        ],
        "fig5A" => vec![set("generalization", Split::Generalization, 12_500)],
        "fig6" => vec![
            set("train-length", Split::Train, 1000),
            set("generalization", Split::Generalization, 1000),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown protocol {other:?} (expected one of {PROTOCOLS:?})"
            )))
        }
    };
    Ok(Protocol {
        id: id.into(),
        sets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub set: String,
    pub report: MetricReport,
    pub outcomes: Vec<TokenOutcome>,
}

/// Samples each evaluation set (novel with respect to `exclude`) and runs
/// every requested decoding mode.
pub fn run_protocol(
    model: &Model,
    protocol: &Protocol,
    regime: &LengthRegime,
    exclude: &ContentIndex,
    seed: u64,
    modes: &[DecodeMode],
) -> Result<Vec<ProtocolResult>> {
    let mut results = Vec::new();
    for (i, set) in protocol.sets.iter().enumerate() {
        let spec = SampleSpec {
            min_len: set.lengths.0,
            max_len: set.lengths.1,
            label_range: regime.label_range,
            split: set.split,
        };
        // In multi-task protocols each task gets its own sequences.
        let mut episodes = Vec::new();
        for (t, &task) in set.tasks.iter().enumerate() {
            let records = sample_eval_sequences(
                &spec,
                set.per_task,
                seed.wrapping_add((i * 97 + t) as u64),
                exclude,
            )?;
            episodes.extend(episodes_for(&records, &[task]));
        }
        for &mode in modes {
            let (report, outcomes) = match mode {
                DecodeMode::TeacherForcing => {
                    eval_teacher_forcing(model, &episodes, &AblationSpec::none())?
                }
                DecodeMode::Rollout => eval_rollout(model, &episodes, &AblationSpec::none())?,
            };
            results.push(ProtocolResult {
                set: set.name.clone(),
                report,
                outcomes,
            });
        }
    }
    Ok(results)
}

/// Task list a model is evaluated on.
pub fn model_tasks(model: &Model, single: Task) -> Vec<Task> {
    match model.config.task_mode {
        TaskMode::Single => vec![single],
        TaskMode::Multi => Task::ALL.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(seq: u64, pos: usize, fc: u8, label: bool) -> TokenOutcome {
        TokenOutcome {
            seq_id: seq,
            task: Task::Copy,
            seq_len: 20,
            position: pos,
            kind: TargetKind::Item,
            features_correct: fc,
            label_correct: label,
            control_correct: None,
        }
    }

    #[test]
    fn nineteen_of_twenty_clears_095_not_exact() {
        let mut v: Vec<_> = (0..19).map(|p| outcome(0, p, 3, true)).collect();
        v.push(outcome(0, 19, 2, true));
        let t = sequence_thresholds(&v, &[1.0, 0.95, 0.90]).unwrap();
        assert_eq!(t, vec![(1.0, 0.0), (0.95, 1.0), (0.90, 1.0)]);
    }

    #[test]
    fn empty_outcomes_are_an_error() {
        assert!(matches!(
            sequence_thresholds(&[], &[1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn item_accuracy_averages_feature_fractions() {
        let v = vec![
            outcome(0, 0, 3, true),
            outcome(0, 1, 2, false),
            outcome(1, 0, 0, true),
        ];
        let r = summarize(DecodeMode::TeacherForcing, &v).unwrap();
        assert!((r.item_accuracy - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!((r.label_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.by_position.len(), 2);
        assert_eq!(r.n_sequences, 2);
    }

    #[test]
    fn protocol_sizes() {
        let reg = LengthRegime::default();
        let p = protocol("fig2", 1.0, &reg, &[Task::SortShape]).unwrap();
        assert_eq!(
            p.sets.iter().map(|s| s.per_task).collect::<Vec<_>>(),
            vec![5000, 5000]
        );
        let p = protocol("fig5A", 0.1, &reg, &Task::ALL).unwrap();
        assert_eq!(p.sets[0].per_task, 1250);
        assert_eq!(p.sets[0].tasks.len(), 6);
        let p = protocol("fig6", 1.0, &reg, &Task::ALL).unwrap();
        assert_eq!(p.sets.len(), 2);
        assert!(p.sets.iter().all(|s| s.per_task == 1000));
        assert!(matches!(
            protocol("fig9", 1.0, &reg, &[]),
            Err(Error::Config(_))
        ));
    }
}
