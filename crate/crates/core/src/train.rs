//! Teacher-forced training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::eval::{eval_teacher_forcing, EvalEpisode, MetricReport};
use crate::model::{AblationSpec, ForwardOutput, Model, Readouts, CONTINUE_CLASS};
use crate::optim::{AdamConfig, AdamState};
use crate::tasks::{Task, FEATURES, FEATURE_VALUES};
use crate::tokens::{encode_tokens, Episode, Stream, TaskMode, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub eval_every: u64,
    pub seed: u64,
    /// Fraction of steps fed ground-truth tokens. Only 1.0 is supported.
    pub tf_rate: f64,
    /// Task for single-task runs; ignored in multi-task mode.
    pub task: Task,
    /// Sequences in the held-out sample used for checkpoint selection.
    pub eval_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            steps: 32_000,
            learning_rate: 1e-4,
            eval_every: 500,
            seed: 0,
            tf_rate: 1.0,
            task: Task::SortShape,
            eval_sequences: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tf_rate != 1.0 {
            return Err(Error::Config(format!(
                "teacher forcing rate must be 1.0, got {}",
                self.tf_rate
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch size and eval cadence must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// A batch of teacher-forced streams. The model consumes the streams packed
/// back to back; the padded view and loss mask describe the same batch in
/// right-padded form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub streams: Vec<Stream>,
    pub padded_len: usize,
    /// Per stream, per padded position: true where a readout carries loss.
    pub loss_mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Right-padded tokens of stream `i`.
    pub fn padded(&self, i: usize) -> Vec<Option<Token>> {
        let s = &self.streams[i];
        let mut v: Vec<Option<Token>> = s.tokens.iter().copied().map(Some).collect();
        v.resize(self.padded_len, None);
        v
    }

    pub fn n_outputs(&self) -> usize {
        self.streams.iter().map(|s| s.targets.len()).sum()
    }
}

pub fn build_batch(records: &[&SequenceRecord], tasks: &[Task], model: &Model) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if tasks.len() != records.len() {
        return Err(Error::Config("one task per record is required".into()));
    }
    let mut streams = Vec::with_capacity(records.len());
    for (r, &t) in records.iter().zip(tasks) {
        let ep = Episode::new(t, r.items.clone());
        let enc = encode_tokens(
            &ep,
            model.config.task_mode,
            model.config.encoding.order_code(),
        )?;
        streams.push(enc.teacher_forced());
    }
    let padded_len = streams.iter().map(Stream::len).max().unwrap_or(0);
    let loss_mask = streams
        .iter()
        .map(|s| {
            let mut m = vec![false; padded_len];
            for p in s.readout_positions() {
                m[p] = true;
            }
            m
        })
        .collect();
    Ok(Batch {
        streams,
        padded_len,
        loss_mask,
    })
}

/// Targets for the loss heads, one entry per readout.
struct LossTargets {
    features: [Vec<Option<usize>>; FEATURES],
    codes: Vec<Option<usize>>,
    control: Vec<Option<usize>>,
}

fn loss_targets<'a>(streams: impl Iterator<Item = &'a Stream>) -> LossTargets {
    let mut t = LossTargets {
        features: [Vec::new(), Vec::new(), Vec::new()],
        codes: Vec::new(),
        control: Vec::new(),
    };
    for s in streams {
        for tok in &s.targets {
            match *tok {
                Token::Item { item, code } => {
                    for (f, v) in item.features().into_iter().enumerate() {
                        t.features[f].push(Some(v as usize));
                    }
                    t.codes.push(Some(code as usize));
                    t.control.push(Some(CONTINUE_CLASS));
                }
                Token::Control(c) => {
                    for f in &mut t.features {
                        f.push(None);
                    }
                    t.codes.push(None);
                    t.control.push(Some(c.index()));
                }
            }
        }
    }
    t
}

/// Adds the summed feature, code and control cross-entropy to the tape and
/// returns it divided by the number of output tokens.
pub fn attach_loss(out: &mut ForwardOutput, streams: &[&Stream]) -> Result<(Var, usize)> {
    let t = loss_targets(streams.iter().copied());
    let n = t.control.len();
    if n != out.tape.value(out.item_logits).rows() {
        return Err(Error::Config("readouts do not match stream targets".into()));
    }
    let tape = &mut out.tape;
    let mut parts = Vec::with_capacity(FEATURES + 2);
    for (f, targets) in t.features.iter().enumerate() {
        let cols = f * FEATURE_VALUES..(f + 1) * FEATURE_VALUES;
        parts.push(tape.cross_entropy_rows(out.item_logits, cols, targets)?);
    }
    let v = tape.value(out.label_logits).cols();
    parts.push(tape.cross_entropy_rows(out.label_logits, 0..v, &t.codes)?);
    let c = tape.value(out.control_logits).cols();
    parts.push(tape.cross_entropy_rows(out.control_logits, 0..c, &t.control)?);
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    Ok((tape.scale(total, 1.0 / n as f64), n))
}

/// Mean per-token loss of `batch` without updating anything.
pub fn batch_loss(model: &Model, batch: &Batch) -> Result<f64> {
    let refs: Vec<&Stream> = batch.streams.iter().collect();
    let mut out = model.forward(&refs, &AblationSpec::none(), Readouts::Outputs, false)?;
    let (loss, _) = attach_loss(&mut out, &refs)?;
    Ok(out.tape.value(loss).data()[0])
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_grads(model: &Model, batch: &Batch) -> Result<(f64, Vec<Vec<f64>>)> {
    let refs: Vec<&Stream> = batch.streams.iter().collect();
    let mut out = model.forward(&refs, &AblationSpec::none(), Readouts::Outputs, true)?;
    let (loss, _) = attach_loss(&mut out, &refs)?;
    out.tape.backward(loss)?;
    let value = out.tape.value(loss).data()[0];
    let grads = out
        .params
        .iter()
        .zip(&model.params.tensors)
        .map(|(&p, t)| {
            out.tape
                .grad(p)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();
    Ok((value, grads))
}

/// One Adam update on `batch`; returns the pre-update loss.
pub fn training_step(
    model: &mut Model,
    batch: &Batch,
    adam: &mut AdamState,
    step: u64,
) -> Result<f64> {
    let refs: Vec<&Stream> = batch.streams.iter().collect();
    let mut out = model.forward(&refs, &AblationSpec::none(), Readouts::Outputs, true)?;
    let (loss, _) = attach_loss(&mut out, &refs)?;
    let value = out.tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { step, what: "loss" });
    }
    out.tape.backward(loss)?;
    let grads: Vec<Option<&[f64]>> = out.params.iter().map(|&p| out.tape.grad(p)).collect();
    adam.step(&mut model.params.tensors, &grads)?;
    Ok(value)
}

/// Draws training batches: records in shuffled epochs, and in multi-task
/// mode an independent uniformly drawn task per record.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    mode: TaskMode,
    task: Task,
}

impl BatchSampler {
    pub fn new(n_records: usize, mode: TaskMode, task: Task, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut order: Vec<usize> = (0..n_records).collect();
        order.shuffle(&mut rng);
        Self {
            rng,
            order,
            cursor: 0,
            mode,
            task,
        }
    }

    pub fn next_task(&mut self) -> Task {
        match self.mode {
            TaskMode::Single => self.task,
            TaskMode::Multi => Task::ALL[self.rng.gen_range(0..Task::ALL.len())],
        }
    }

    pub fn next_batch(&mut self, size: usize) -> (Vec<usize>, Vec<Task>) {
        let mut idx = Vec::with_capacity(size);
        let mut tasks = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
            tasks.push(self.next_task());
        }
        (idx, tasks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub train: MetricSummary,
    pub generalization: MetricSummary,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub item_accuracy: f64,
    pub label_accuracy: f64,
    pub eos_accuracy: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            item_accuracy: r.item_accuracy,
            label_accuracy: r.label_accuracy,
            eos_accuracy: r.eos_accuracy,
        }
    }
}

impl MetricSummary {
    pub fn token_accuracy(&self) -> f64 {
        0.5 * (self.item_accuracy + self.label_accuracy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EvalRecord>,
}

impl RunLog {
    /// Index of the evaluation with the highest generalization token
    /// accuracy; earliest wins ties.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            match best {
                Some(b)
                    if self.records[b].generalization.token_accuracy()
                        >= r.generalization.token_accuracy() => {}
                _ => best = Some(i),
            }
        }
        best
    }
}

/// Receives training progress; the std crate uses it to write checkpoints.
pub trait TrainObserver {
    type Error: From<Error>;

    fn on_step(&mut self, _step: u64, _loss: f64) {}

    /// Called after each evaluation. May return the path of a checkpoint
    /// written for this step.
    fn on_eval(
        &mut self,
        _model: &Model,
        _record: &EvalRecord,
    ) -> core::result::Result<Option<String>, Self::Error> {
        Ok(None)
    }
}

/// Observer that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl TrainObserver for NoObserver {
    type Error = Error;
}

/// Held-out episodes evaluated at every checkpoint.
#[derive(Debug, Clone)]
pub struct EvalSamples {
    pub train: Vec<EvalEpisode>,
    pub generalization: Vec<EvalEpisode>,
}

/// Runs the full loop: `steps` Adam updates with evaluation every
/// `eval_every` steps (and at the final step).
pub fn train<O: TrainObserver>(
    model: &mut Model,
    records: &[SequenceRecord],
    samples: &EvalSamples,
    config: &TrainConfig,
    observer: &mut O,
) -> core::result::Result<RunLog, O::Error> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Config("no training records".into()).into());
    }
    let mut adam = AdamState::for_params(
        AdamConfig::with_lr(config.learning_rate),
        &model.params.tensors,
    );
    let mut sampler = BatchSampler::new(
        records.len(),
        model.config.task_mode,
        config.task,
        config.seed,
    );
    let mut log = RunLog::default();
    let mut loss_acc = 0.0;
    let mut loss_n = 0u64;
    for step in 1..=config.steps {
        let (idx, tasks) = sampler.next_batch(config.batch_size);
        let batch_records: Vec<&SequenceRecord> = idx.iter().map(|&i| &records[i]).collect();
        let batch = build_batch(&batch_records, &tasks, model)?;
        let loss = training_step(model, &batch, &mut adam, step)?;
        observer.on_step(step, loss);
        loss_acc += loss;
        loss_n += 1;
        if step % config.eval_every == 0 || step == config.steps {
            let (train_report, _) =
                eval_teacher_forcing(model, &samples.train, &AblationSpec::none())?;
            let (gen_report, _) =
                eval_teacher_forcing(model, &samples.generalization, &AblationSpec::none())?;
            let mut record = EvalRecord {
                step,
                train_loss: loss_acc / loss_n as f64,
                train: (&train_report).into(),
                generalization: (&gen_report).into(),
                checkpoint: None,
            };
            record.checkpoint = observer.on_eval(model, &record)?;
            log.records.push(record);
            loss_acc = 0.0;
            loss_n = 0;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec};
    use crate::model::{Encoding, ModelConfig};

    fn tiny_model(mode: TaskMode) -> Model {
        Model::new(ModelConfig::new(vec![1, 1], 16, Encoding::Label, mode), 3).unwrap()
    }

    fn records(n: usize, min: usize, max: usize) -> Vec<SequenceRecord> {
        generate_dataset(&DatasetSpec {
            seed: 5,
            n_sequences: n,
            min_len: min,
            max_len: max,
            label_range: 50,
            train_max_len: max,
        })
        .unwrap()
    }

    #[test]
    fn batch_padding_and_masks() {
        let data = records(200, 5, 7);
        let five = data.iter().find(|r| r.len() == 5).unwrap();
        let seven = data.iter().find(|r| r.len() == 7).unwrap();
        let m = tiny_model(TaskMode::Single);
        let b = build_batch(&[five, seven], &[Task::Copy, Task::Copy], &m).unwrap();
        assert_eq!(b.padded_len, 15);
        assert_eq!(b.padded(0).len(), 15);
        assert_eq!(b.padded(0).iter().filter(|t| t.is_none()).count(), 4);
        assert_eq!(b.loss_mask[0].iter().filter(|&&x| x).count(), 6);
        assert!(b.loss_mask[0][11..].iter().all(|&x| !x));
        assert!(b
            .streams
            .iter()
            .flat_map(|s| &s.tokens)
            .all(|t| !matches!(t, Token::Control(crate::tasks::Control::Task(_)))));
        assert!(build_batch(&[], &[], &m).is_err());
    }

    #[test]
    fn padding_never_changes_a_sequence_loss() {
        let data = records(200, 5, 12);
        let short = data.iter().find(|r| r.len() == 5).unwrap();
        let long = data.iter().find(|r| r.len() == 12).unwrap();
        let m = tiny_model(TaskMode::Multi);
        let alone = build_batch(&[short], &[Task::SortShape], &m).unwrap();
        let with = build_batch(&[short, long], &[Task::SortShape, Task::Reverse], &m).unwrap();
        let long_only = build_batch(&[long], &[Task::Reverse], &m).unwrap();
        let (a, b, c) = (
            batch_loss(&m, &alone).unwrap(),
            batch_loss(&m, &with).unwrap(),
            batch_loss(&m, &long_only).unwrap(),
        );
        let (na, nc) = (alone.n_outputs() as f64, long_only.n_outputs() as f64);
        let expect = (a * na + c * nc) / (na + nc);
        assert!((b - expect).abs() < 1e-12);
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let data = records(256, 5, 10);
        let m = tiny_model(TaskMode::Single);
        let refs: Vec<&SequenceRecord> = data.iter().collect();
        let b = build_batch(&refs, &vec![Task::Copy; refs.len()], &m).unwrap();
        let refs: Vec<&Stream> = b.streams.iter().collect();
        let mut out = m
            .forward(&refs, &AblationSpec::none(), Readouts::Outputs, false)
            .unwrap();
        let t = loss_targets(refs.iter().copied());
        let ce = out
            .tape
            .cross_entropy_rows(out.item_logits, 0..5, &t.features[0])
            .unwrap();
        let n = t.features[0].iter().flatten().count() as f64;
        let per_token = out.tape.value(ce).data()[0] / n;
        assert!((per_token - 5f64.ln()).abs() < 0.25, "{per_token}");
    }

    #[test]
    fn uniform_task_sampling() {
        let mut s = BatchSampler::new(10, TaskMode::Multi, Task::Copy, 11);
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[s.next_task().index()] += 1;
        }
        for c in counts {
            let f = c as f64 / 60_000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn overfit_loss_decreases() {
        let data = records(10, 5, 6);
        let mut m = tiny_model(TaskMode::Single);
        let refs: Vec<&SequenceRecord> = data.iter().collect();
        let b = build_batch(&refs, &vec![Task::SortShape; refs.len()], &m).unwrap();
        let mut adam = AdamState::for_params(AdamConfig::with_lr(1e-2), &m.params.tensors);
        let first = batch_loss(&m, &b).unwrap();
        for step in 1..=100 {
            training_step(&mut m, &b, &mut adam, step).unwrap();
        }
        let last = batch_loss(&m, &b).unwrap();
        assert!(last < 0.25 * first, "{first} -> {last}");
    }

    #[test]
    fn tf_rate_other_than_one_is_rejected() {
        let cfg = TrainConfig {
            tf_rate: 0.5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_cadence_and_determinism() {
        let data = records(64, 5, 6);
        let cfg = TrainConfig {
            batch_size: 8,
            steps: 20,
            eval_every: 5,
            learning_rate: 1e-3,
            eval_sequences: 4,
            ..TrainConfig::default()
        };
        let samples = EvalSamples {
            train: crate::eval::episodes_for(&data[..4], &[Task::SortShape]),
            generalization: crate::eval::episodes_for(&data[4..8], &[Task::SortShape]),
        };
        let mut a = tiny_model(TaskMode::Single);
        let mut b = tiny_model(TaskMode::Single);
        let la = train(&mut a, &data, &samples, &cfg, &mut NoObserver).unwrap();
        let lb = train(&mut b, &data, &samples, &cfg, &mut NoObserver).unwrap();
        assert_eq!(la.records.len(), 4);
        assert_eq!(la, lb);
        assert_eq!(a.params, b.params);
        assert!(la.best().is_some());
    }
}
