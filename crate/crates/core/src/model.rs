//! Decoder-only causal transformer with post-sublayer layer norm.
//!
//! Item tokens embed as `item_embed(multihot) + order_term`; control tokens
//! embed through their own table and carry no order term. Each layer is
//! future-masked multi-head attention followed by a ReLU MLP, each wrapped
//! as `layer_norm(x + sublayer(x))`. Three linear readouts sit on top: item
//! features (three 5-way groups), order code, and control (tasks, EOS and a
//! "continue with an item" class).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AttentionSaved, Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::tasks::{Control, CONTROL_CLASSES, FEATURE_VALUES, ITEM_DIMS};
use crate::tensor::Tensor;
use crate::tokens::{OrderCode, Stream, TaskMode, Token};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Control readout width: task tokens, EOS, and the item class.
pub const CONTROL_OUTPUTS: usize = CONTROL_CLASSES + 1;
/// Control readout class meaning "the next token is an item".
pub const CONTINUE_CLASS: usize = CONTROL_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Label,
    Sinusoidal,
    Learnable,
}

impl Encoding {
    pub fn order_code(self) -> OrderCode {
        match self {
            Encoding::Label => OrderCode::Label,
            Encoding::Sinusoidal | Encoding::Learnable => OrderCode::Position,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Label => "label",
            Encoding::Sinusoidal => "sin",
            Encoding::Learnable => "learned",
        }
    }
}

impl core::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(Encoding::Label),
            "sin" | "sinusoidal" => Ok(Encoding::Sinusoidal),
            "learned" | "learnable" => Ok(Encoding::Learnable),
            _ => Err(Error::Config(format!("unknown encoding {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Attention heads per layer; its length is the layer count.
    pub heads: Vec<usize>,
    pub d_model: usize,
    pub d_mlp: usize,
    pub encoding: Encoding,
    pub task_mode: TaskMode,
    /// Size of the order-code vocabulary (labels, or positions).
    pub code_vocab: usize,
}

impl ModelConfig {
    pub fn new(heads: Vec<usize>, d_model: usize, encoding: Encoding, task_mode: TaskMode) -> Self {
        Self {
            heads,
            d_model,
            d_mlp: 64,
            encoding,
            task_mode,
            code_vocab: 50,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for &h in &self.heads {
            if h == 0 || self.d_model % h != 0 {
                return Err(Error::Config(format!(
                    "d_model {} is not divisible by {h} heads",
                    self.d_model
                )));
            }
        }
        if self.d_model < 2 || self.d_mlp == 0 || self.code_vocab == 0 {
            return Err(Error::Config("degenerate model dimensions".into()));
        }
        if self.encoding == Encoding::Sinusoidal && self.d_model % 2 != 0 {
            return Err(Error::Config(
                "sinusoidal encoding needs an even d_model".into(),
            ));
        }
        Ok(())
    }

    /// Names and shapes of every trainable tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, m) = (self.d_model, self.d_mlp);
        let mut out: Vec<(String, Vec<usize>)> = vec![("embed.item".into(), vec![ITEM_DIMS, d])];
        match self.encoding {
            Encoding::Label => out.push(("embed.label".into(), vec![self.code_vocab, d])),
            Encoding::Learnable => out.push(("embed.position".into(), vec![self.code_vocab, d])),
            Encoding::Sinusoidal => {}
        }
        out.push(("embed.control".into(), vec![CONTROL_CLASSES, d]));
        for l in 0..self.n_layers() {
            for w in ["q", "k", "v", "o"] {
                out.push((format!("layer{l}.attn.w{w}"), vec![d, d]));
                out.push((format!("layer{l}.attn.b{w}"), vec![d]));
            }
            out.push((format!("layer{l}.ln1.gain"), vec![d]));
            out.push((format!("layer{l}.ln1.bias"), vec![d]));
            out.push((format!("layer{l}.mlp.w1"), vec![d, m]));
            out.push((format!("layer{l}.mlp.b1"), vec![m]));
            out.push((format!("layer{l}.mlp.w2"), vec![m, d]));
            out.push((format!("layer{l}.mlp.b2"), vec![d]));
            out.push((format!("layer{l}.ln2.gain"), vec![d]));
            out.push((format!("layer{l}.ln2.bias"), vec![d]));
        }
        for (name, n) in [
            ("item", ITEM_DIMS),
            ("label", self.code_vocab),
            ("control", CONTROL_OUTPUTS),
        ] {
            out.push((format!("head.{name}.w"), vec![d, n]));
            out.push((format!("head.{name}.b"), vec![n]));
        }
        out
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let (d, m, v) = (self.d_model, self.d_mlp, self.code_vocab);
        let order = match self.encoding {
            Encoding::Sinusoidal => 0,
            Encoding::Label | Encoding::Learnable => v * d,
        };
        let embed = ITEM_DIMS * d + order + CONTROL_CLASSES * d;
        let layer = 4 * (d * d + d) + 4 * d + (d * m + m) + (m * d + d);
        let heads = (d + 1) * (ITEM_DIMS + v + CONTROL_OUTPUTS);
        embed + self.n_layers() * layer + heads
    }
}

/// Named trainable tensors in the order given by
/// [`ModelConfig::parameter_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParameterSet {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases, unit layer-norm
    /// gains. Lookup tables count one active input (three for the item
    /// multihot).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if shape.len() == 1 {
                vec![0.0; n]
            } else {
                let fan_in = match name.as_str() {
                    "embed.item" => crate::tasks::FEATURES,
                    "embed.label" | "embed.position" | "embed.control" => 1,
                    _ => shape[0],
                };
                let a = 1.0 / math::sqrt(fan_in as f64);
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { names, tensors })
    }

    pub fn from_parts(
        config: &ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let expect = config.parameter_shapes();
        if expect.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                expect.len(),
                tensors.len()
            )));
        }
        for ((en, es), (n, t)) in expect.iter().zip(names.iter().zip(&tensors)) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {n} {:?} does not match expected {en} {es:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { names, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Which key positions survive a token-preserve ablation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeepSet {
    /// Positions holding task tokens.
    pub task: bool,
    /// The position holding the ground-truth next output token (readout
    /// queries only).
    pub next_output: bool,
    /// Every visible position.
    pub all: bool,
}

impl KeepSet {
    pub const TASK: KeepSet = KeepSet {
        task: true,
        next_output: false,
        all: false,
    };
    pub const NEXT: KeepSet = KeepSet {
        task: false,
        next_output: true,
        all: false,
    };
    pub const ALL: KeepSet = KeepSet {
        task: false,
        next_output: false,
        all: true,
    };

    pub fn union(self, other: KeepSet) -> KeepSet {
        KeepSet {
            task: self.task || other.task,
            next_output: self.next_output || other.next_output,
            all: self.all || other.all,
        }
    }
}

/// Post-softmax attention masks. Nothing is renormalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    /// `(layer, head)` pairs whose weights are zeroed.
    pub drop_heads: Vec<(usize, usize)>,
    /// Per-layer keep-sets; layers without a rule keep everything.
    pub preserve: Vec<(usize, KeepSet)>,
}

impl AblationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn drop_head(layer: usize, head: usize) -> Self {
        Self {
            drop_heads: vec![(layer, head)],
            preserve: Vec::new(),
        }
    }

    pub fn drop_layer(config: &ModelConfig, layer: usize) -> Self {
        Self {
            drop_heads: (0..config.heads.get(layer).copied().unwrap_or(0))
                .map(|h| (layer, h))
                .collect(),
            preserve: Vec::new(),
        }
    }

    pub fn preserve(rules: Vec<(usize, KeepSet)>) -> Self {
        Self {
            drop_heads: Vec::new(),
            preserve: rules,
        }
    }

    pub fn is_none(&self) -> bool {
        self.drop_heads.is_empty() && self.preserve.is_empty()
    }

    /// Short identifier such as `none`, `dropL1H2` or `taskL0+nextL1`.
    pub fn name(&self) -> String {
        if self.is_none() {
            return "none".into();
        }
        let mut parts = Vec::new();
        for (l, h) in &self.drop_heads {
            parts.push(format!("dropL{l}H{h}"));
        }
        for (l, k) in &self.preserve {
            if k.all {
                parts.push(format!("allL{l}"));
            } else {
                if k.task {
                    parts.push(format!("taskL{l}"));
                }
                if k.next_output {
                    parts.push(format!("nextL{l}"));
                }
                if !k.task && !k.next_output {
                    parts.push(format!("noneL{l}"));
                }
            }
        }
        parts.join("+")
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        for &(l, h) in &self.drop_heads {
            match config.heads.get(l) {
                Some(&n) if h < n => {}
                _ => {
                    return Err(Error::Ablation(format!(
                        "no head {h} in layer {l} for architecture {:?}",
                        config.heads
                    )))
                }
            }
        }
        for &(l, _) in &self.preserve {
            if l >= config.n_layers() {
                return Err(Error::Ablation(format!(
                    "no layer {l} to preserve tokens in"
                )));
            }
        }
        Ok(())
    }

    fn keep_masks(
        &self,
        layer: usize,
        heads: usize,
        streams: &[&Stream],
    ) -> Option<Vec<Option<Vec<bool>>>> {
        let dropped: Vec<bool> = (0..heads)
            .map(|h| self.drop_heads.contains(&(layer, h)))
            .collect();
        let keep = self
            .preserve
            .iter()
            .filter(|(l, _)| *l == layer)
            .fold(None, |acc: Option<KeepSet>, (_, k)| {
                Some(acc.map_or(*k, |a| a.union(*k)))
            });
        if !dropped.iter().any(|&d| d) && keep.is_none() {
            return None;
        }
        let mut masks = Vec::with_capacity(streams.len() * heads);
        for s in streams {
            let t = s.tokens.len();
            let preserved = keep.map(|k| {
                let mut m = vec![false; t * t];
                for q in 0..t {
                    for key in 0..=q {
                        let hit = k.all
                            || (k.task
                                && matches!(s.tokens[key], Token::Control(Control::Task(_))));
                        m[q * t + key] = hit;
                    }
                    if k.next_output && q >= s.first_readout {
                        if let Some(&src) = s.next_source.get(q - s.first_readout) {
                            if src <= q {
                                m[q * t + src] = true;
                            }
                        }
                    }
                }
                m
            });
            for &d in &dropped {
                masks.push(if d {
                    Some(vec![false; t * t])
                } else {
                    preserved.clone()
                });
            }
        }
        Some(masks)
    }
}

/// Which stream positions get readouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readouts {
    /// Positions from the first readout query onward.
    Outputs,
    /// Every position.
    All,
}

/// Result of a forward pass over packed streams. The tape is kept so the
/// caller can attach a loss and run backward.
#[derive(Debug)]
pub struct ForwardOutput {
    pub tape: Tape,
    pub params: Vec<Var>,
    /// Row ranges of each stream in the packed activations.
    pub segments: Vec<Range<usize>>,
    /// Packed rows that carry readouts, in stream order.
    pub readout_rows: Vec<usize>,
    /// Per stream, the range of readout indices belonging to it.
    pub readout_spans: Vec<Range<usize>>,
    pub item_logits: Var,
    pub label_logits: Var,
    pub control_logits: Var,
    pub attention: Vec<Var>,
    /// Output of each layer (after its second layer norm).
    pub layer_outputs: Vec<Var>,
}

impl ForwardOutput {
    pub fn trace(&self, layer: usize) -> &AttentionSaved {
        self.tape
            .attention(self.attention[layer])
            .expect("attention node")
    }

    /// Readout logits for readout index `r`: (item 15, code, control).
    pub fn logits(&self, r: usize) -> (&[f64], &[f64], &[f64]) {
        (
            self.tape.value(self.item_logits).row(r),
            self.tape.value(self.label_logits).row(r),
            self.tape.value(self.control_logits).row(r),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

/// `sin`/`cos` position vector: even dims `sin(p / 10000^(2i/d))`, odd dims
/// the matching cosine.
pub fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = math::pow(10000.0, -(2.0 * i as f64) / d as f64);
        let a = pos as f64 * freq;
        v[2 * i] = math::sin(a);
        v[2 * i + 1] = math::cos(a);
    }
    v
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParameterSet::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Embeds packed token rows. Returns the `[rows, d_model]` variable.
    fn embed(&self, tape: &mut Tape, p: &[Var], tokens: &[Token]) -> Result<Var> {
        let d = self.config.d_model;
        let n = tokens.len();
        let mut multihot = vec![0.0; n * ITEM_DIMS];
        let mut codes = Vec::with_capacity(n);
        let mut controls = Vec::with_capacity(n);
        for (r, tok) in tokens.iter().enumerate() {
            match *tok {
                Token::Item { item, code } => {
                    multihot[r * ITEM_DIMS..(r + 1) * ITEM_DIMS].copy_from_slice(&item.multihot()?);
                    if code as usize >= self.config.code_vocab {
                        return Err(Error::Encoding(format!(
                            "order code {code} outside the {}-entry {} table",
                            self.config.code_vocab,
                            self.config.encoding.name()
                        )));
                    }
                    codes.push(Some(code as usize));
                    controls.push(None);
                }
                Token::Control(c) => {
                    codes.push(None);
                    controls.push(Some(c.index()));
                }
            }
        }
        let mh = tape.constant(Tensor::new(vec![n, ITEM_DIMS], multihot)?);
        let mut x = tape.matmul(mh, p[0])?;
        let mut next = 1;
        let order = match self.config.encoding {
            Encoding::Label | Encoding::Learnable => {
                next += 1;
                tape.gather(p[1], &codes)?
            }
            Encoding::Sinusoidal => {
                let mut data = vec![0.0; n * d];
                for (r, c) in codes.iter().enumerate() {
                    if let Some(c) = c {
                        data[r * d..(r + 1) * d].copy_from_slice(&sinusoid(*c, d));
                    }
                }
                tape.constant(Tensor::new(vec![n, d], data)?)
            }
        };
        x = tape.add(x, order)?;
        let ctrl = tape.gather(p[next], &controls)?;
        tape.add(x, ctrl)
    }

    fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Runs the model over independent streams packed into one matrix.
    /// Parameters are recorded as trainable leaves when `grad` is set.
    pub fn forward(
        &self,
        streams: &[&Stream],
        ablation: &AblationSpec,
        readouts: Readouts,
        grad: bool,
    ) -> Result<ForwardOutput> {
        ablation.validate(&self.config)?;
        let mut tape = Tape::new();
        let p: Vec<Var> = self
            .params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), grad))
            .collect();
        let mut tokens = Vec::new();
        let mut segments = Vec::with_capacity(streams.len());
        let mut readout_rows = Vec::new();
        let mut readout_spans = Vec::with_capacity(streams.len());
        for s in streams {
            let start = tokens.len();
            tokens.extend_from_slice(&s.tokens);
            segments.push(start..tokens.len());
            let first = match readouts {
                Readouts::Outputs => s.first_readout.min(s.tokens.len()),
                Readouts::All => 0,
            };
            let r0 = readout_rows.len();
            readout_rows.extend(start + first..tokens.len());
            readout_spans.push(r0..readout_rows.len());
        }
        let mut x = self.embed(&mut tape, &p, &tokens)?;
        let order_tables = usize::from(self.config.encoding != Encoding::Sinusoidal);
        let mut idx = 2 + order_tables;
        let mut attention = Vec::with_capacity(self.config.n_layers());
        let mut layer_outputs = Vec::with_capacity(self.config.n_layers());
        for (l, &heads) in self.config.heads.iter().enumerate() {
            let w = &p[idx..idx + 16];
            idx += 16;
            let q = Self::linear(&mut tape, x, w[0], w[1])?;
            let k = Self::linear(&mut tape, x, w[2], w[3])?;
            let v = Self::linear(&mut tape, x, w[4], w[5])?;
            let keep = ablation.keep_masks(l, heads, streams);
            let att = tape.causal_attention(q, k, v, &segments, heads, keep)?;
            attention.push(att);
            let o = Self::linear(&mut tape, att, w[6], w[7])?;
            let r = tape.add(x, o)?;
            let x1 = tape.layer_norm(r, w[8], w[9], LAYER_NORM_EPS)?;
            let h = Self::linear(&mut tape, x1, w[10], w[11])?;
            let h = tape.relu(h);
            let m = Self::linear(&mut tape, h, w[12], w[13])?;
            let r = tape.add(x1, m)?;
            x = tape.layer_norm(r, w[14], w[15], LAYER_NORM_EPS)?;
            layer_outputs.push(x);
        }
        let sel = tape.select_rows(x, &readout_rows)?;
        let item_logits = Self::linear(&mut tape, sel, p[idx], p[idx + 1])?;
        let label_logits = Self::linear(&mut tape, sel, p[idx + 2], p[idx + 3])?;
        let control_logits = Self::linear(&mut tape, sel, p[idx + 4], p[idx + 5])?;
        Ok(ForwardOutput {
            tape,
            params: p,
            segments,
            readout_rows,
            readout_spans,
            item_logits,
            label_logits,
            control_logits,
            attention,
            layer_outputs,
        })
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes the three 5-way feature groups of an item readout.
pub fn argmax_features(item_logits: &[f64]) -> [u8; 3] {
    let mut f = [0u8; 3];
    for (g, slot) in f.iter_mut().enumerate() {
        *slot = argmax(&item_logits[g * FEATURE_VALUES..(g + 1) * FEATURE_VALUES]) as u8;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Item, LabeledItem, Task};
    use crate::tokens::{encode_tokens, Episode};

    fn stream(task: Task, mode: TaskMode, labels: &[u8]) -> Stream {
        let input = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledItem {
                item: Item::new((i % 5) as u8, ((i * 3) % 5) as u8, ((i * 2) % 5) as u8).unwrap(),
                label: l,
            })
            .collect();
        encode_tokens(&Episode::new(task, input), mode, OrderCode::Label)
            .unwrap()
            .teacher_forced()
    }

    fn small(encoding: Encoding, heads: Vec<usize>, mode: TaskMode) -> Model {
        Model::new(ModelConfig::new(heads, 16, encoding, mode), 7).unwrap()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for heads in [vec![1], vec![1, 1], vec![2, 4], vec![4, 1]] {
            for enc in [Encoding::Label, Encoding::Sinusoidal, Encoding::Learnable] {
                let cfg = ModelConfig::new(heads.clone(), 32, enc, TaskMode::Multi);
                let p = ParameterSet::init(&cfg, 0).unwrap();
                assert_eq!(p.count(), cfg.parameter_count());
            }
        }
        let a = ModelConfig::new(vec![2, 1], 64, Encoding::Label, TaskMode::Multi);
        let b = ModelConfig::new(vec![1, 2], 64, Encoding::Label, TaskMode::Multi);
        assert_eq!(a.parameter_count(), b.parameter_count());
    }

    #[test]
    fn indivisible_heads_are_rejected() {
        let cfg = ModelConfig::new(vec![3], 16, Encoding::Label, TaskMode::Single);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn readout_count_matches_stream() {
        let m = small(Encoding::Label, vec![1, 1], TaskMode::Single);
        let s = stream(Task::SortShape, TaskMode::Single, &[1, 4, 9, 12, 30]);
        let out = m
            .forward(&[&s], &AblationSpec::none(), Readouts::All, false)
            .unwrap();
        assert_eq!(out.tape.value(out.item_logits).rows(), s.len());
        let out = m
            .forward(&[&s], &AblationSpec::none(), Readouts::Outputs, false)
            .unwrap();
        assert_eq!(out.tape.value(out.item_logits).rows(), s.targets.len());
        assert_eq!(out.tape.value(out.control_logits).cols(), CONTROL_OUTPUTS);
    }

    #[test]
    fn label_embedding_is_additive() {
        let m = small(Encoding::Label, vec![1], TaskMode::Single);
        let item = Item::new(2, 1, 3).unwrap();
        let mut tape = Tape::new();
        let p: Vec<Var> = m
            .params
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let toks = [
            Token::Item { item, code: 3 },
            Token::Item { item, code: 40 },
        ];
        let x = m.embed(&mut tape, &p, &toks).unwrap();
        let e = tape.value(x);
        let table = m.params.get("embed.label").unwrap();
        for c in 0..16 {
            let diff = e.row(0)[c] - e.row(1)[c];
            let expect = table.row(3)[c] - table.row(40)[c];
            assert!((diff - expect).abs() < 1e-12);
        }
        let items = m.params.get("embed.item").unwrap();
        for c in 0..16 {
            let expect =
                items.row(2)[c] + items.row(5 + 1)[c] + items.row(10 + 3)[c] + table.row(3)[c];
            assert!((e.row(0)[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_at_zero() {
        let v = sinusoid(0, 8);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn learnable_table_overflow_is_encoding_error() {
        let mut cfg = ModelConfig::new(vec![1], 16, Encoding::Learnable, TaskMode::Single);
        cfg.code_vocab = 6;
        let m = Model::new(cfg, 0).unwrap();
        let input: Vec<LabeledItem> = (0..7)
            .map(|i| LabeledItem {
                item: Item::new(0, 0, i % 5).unwrap(),
                label: i,
            })
            .collect();
        let s = encode_tokens(
            &Episode::new(Task::Copy, input),
            TaskMode::Single,
            OrderCode::Position,
        )
        .unwrap()
        .teacher_forced();
        let err = m
            .forward(&[&s], &AblationSpec::none(), Readouts::Outputs, false)
            .unwrap_err();
        assert!(matches!(err, Error::Encoding(_)));
    }

    #[test]
    fn causality_is_bit_exact() {
        let m = small(Encoding::Label, vec![2, 2], TaskMode::Multi);
        let a = stream(Task::GroupColor, TaskMode::Multi, &[2, 5, 7, 11, 13, 17]);
        let base = m
            .forward(&[&a], &AblationSpec::none(), Readouts::All, false)
            .unwrap();
        for t in 0..a.len() - 1 {
            let mut b = a.clone();
            b.tokens[t + 1] = match b.tokens[t + 1] {
                Token::Item { item, code } => Token::Item {
                    item: Item::new((item.shape + 1) % 5, item.color, item.texture).unwrap(),
                    code: (code + 1) % 50,
                },
                Token::Control(_) => Token::Control(Control::Task(Task::Copy)),
            };
            let out = m
                .forward(&[&b], &AblationSpec::none(), Readouts::All, false)
                .unwrap();
            for r in 0..=t {
                let (x, y) = (base.logits(r), out.logits(r));
                assert_eq!(x, y, "position {r} changed when perturbing {}", t + 1);
            }
        }
    }

    #[test]
    fn ablation_identity_is_bit_exact() {
        let m = small(Encoding::Label, vec![1, 2], TaskMode::Multi);
        let a = stream(Task::SortColor, TaskMode::Multi, &[0, 3, 8, 20, 21]);
        let none = m
            .forward(&[&a], &AblationSpec::none(), Readouts::All, false)
            .unwrap();
        let keep_all = AblationSpec::preserve(vec![(0, KeepSet::ALL), (1, KeepSet::ALL)]);
        let kept = m.forward(&[&a], &keep_all, Readouts::All, false).unwrap();
        for r in 0..a.len() {
            assert_eq!(none.logits(r), kept.logits(r));
        }
    }

    #[test]
    fn dropping_the_only_head_zeroes_attention_output() {
        let m = small(Encoding::Label, vec![1], TaskMode::Single);
        let a = stream(Task::Copy, TaskMode::Single, &[1, 2, 3, 4, 5]);
        let out = m
            .forward(&[&a], &AblationSpec::drop_head(0, 0), Readouts::All, false)
            .unwrap();
        assert!(out
            .tape
            .value(out.attention[0])
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_ablation_is_rejected() {
        let m = small(Encoding::Label, vec![1], TaskMode::Single);
        let a = stream(Task::Copy, TaskMode::Single, &[1, 2, 3, 4, 5]);
        let err = m.forward(&[&a], &AblationSpec::drop_head(0, 1), Readouts::All, false);
        assert!(matches!(err, Err(Error::Ablation(_))));
        let err = m.forward(&[&a], &AblationSpec::drop_head(1, 0), Readouts::All, false);
        assert!(matches!(err, Err(Error::Ablation(_))));
    }

    #[test]
    fn packing_does_not_change_outputs() {
        let m = small(Encoding::Label, vec![1, 1], TaskMode::Single);
        let a = stream(Task::Reverse, TaskMode::Single, &[1, 2, 3, 4, 5]);
        let b = stream(Task::Reverse, TaskMode::Single, &[3, 9, 10, 22, 31, 40, 41]);
        let solo = m
            .forward(&[&b], &AblationSpec::none(), Readouts::Outputs, false)
            .unwrap();
        let both = m
            .forward(&[&a, &b], &AblationSpec::none(), Readouts::Outputs, false)
            .unwrap();
        let off = both.readout_spans[1].start;
        for r in 0..b.targets.len() {
            let (x, y) = (solo.logits(r), both.logits(off + r));
            for (u, v) in x.0.iter().zip(y.0) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn preserve_rules_build_expected_masks() {
        let cfg = ModelConfig::new(vec![1, 1], 16, Encoding::Label, TaskMode::Multi);
        let s = stream(Task::Reverse, TaskMode::Multi, &[4, 8, 15, 16, 23]);
        let spec = AblationSpec::preserve(vec![(0, KeepSet::TASK), (1, KeepSet::NEXT)]);
        assert_eq!(spec.name(), "taskL0+nextL1");
        let t = s.len();
        let m0 = spec.keep_masks(0, 1, &[&s]).unwrap();
        let m0 = m0[0].as_ref().unwrap();
        for q in 0..t {
            for k in 0..=q {
                let is_task = matches!(s.tokens[k], Token::Control(Control::Task(_)));
                assert_eq!(m0[q * t + k], is_task);
            }
        }
        let m1 = spec.keep_masks(1, 1, &[&s]).unwrap();
        let m1 = m1[0].as_ref().unwrap();
        let q = s.first_readout + 1;
        let kept: Vec<usize> = (0..t).filter(|&k| m1[q * t + k]).collect();
        assert_eq!(kept, vec![s.next_source[1]]);
        assert!(cfg.validate().is_ok());
    }
}
