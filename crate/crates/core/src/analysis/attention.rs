//! Attention map extraction and aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalEpisode;
use crate::model::{AblationSpec, Model, Readouts};
use crate::tasks::{Control, Task};
use crate::tokens::{encode_tokens, Episode, Stream, TaskMode, Token};

/// One head's attention over a teacher-forced stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub size: usize,
    /// Row-major `size x size` post-softmax weights (query rows).
    pub weights: Vec<f64>,
    /// Weights after the ablation mask.
    pub ablated: Vec<f64>,
    /// Stream position shown at each row/column.
    pub order: Vec<usize>,
    /// Short token descriptions in display order.
    pub tokens: Vec<String>,
    /// Display indices where a new first-level feature group starts among
    /// the input items (empty for copy/reverse).
    pub group_starts: Vec<usize>,
}

fn describe(t: &Token) -> String {
    match t {
        Token::Control(Control::Eos) => "EOS".into(),
        Token::Control(Control::Task(t)) => format!("<{}>", t.name()),
        Token::Item { item, code } => {
            format!(
                "s{}c{}t{}:{}",
                item.shape + 1,
                item.color + 1,
                item.texture + 1,
                code
            )
        }
    }
}

pub(crate) fn stream_for(model: &Model, e: &EvalEpisode) -> Result<Stream> {
    Ok(encode_tokens(
        &e.episode,
        model.config.task_mode,
        model.config.encoding.order_code(),
    )?
    .teacher_forced())
}

fn lead(model: &Model) -> usize {
    usize::from(model.config.task_mode == TaskMode::Multi)
}

/// Attention matrices for every (layer, head). With `reorder_to_output`,
/// input-item rows and columns are permuted together into target order;
/// control tokens and output positions stay put.
pub fn attention_maps(
    model: &Model,
    episode: &EvalEpisode,
    ablation: &AblationSpec,
    reorder_to_output: bool,
) -> Result<Vec<AttentionMap>> {
    let stream = stream_for(model, episode)?;
    let out = model.forward(&[&stream], ablation, Readouts::Outputs, false)?;
    let t = stream.len();
    let lead = lead(model);
    let k = episode.episode.len();
    let mut order: Vec<usize> = (0..t).collect();
    if reorder_to_output {
        for (j, &src) in episode.episode.source.iter().enumerate() {
            order[lead + j] = lead + src;
        }
    }
    let group_starts = match episode.episode.task.primary_feature() {
        None => Vec::new(),
        Some(f) => {
            let feats: Vec<u8> = (0..k)
                .map(|j| {
                    let p = order[lead + j] - lead;
                    episode.episode.input[p].item.features()[f]
                })
                .collect();
            (0..k)
                .filter(|&j| j == 0 || feats[j] != feats[j - 1])
                .map(|j| lead + j)
                .collect()
        }
    };
    let tokens: Vec<String> = order.iter().map(|&p| describe(&stream.tokens[p])).collect();
    let mut maps = Vec::new();
    for (layer, &heads) in model.config.heads.iter().enumerate() {
        let saved = out.trace(layer);
        for head in 0..heads {
            let raw = &saved.probs[head];
            let abl = saved.ablated(0, head);
            let permute = |m: &[f64]| -> Vec<f64> {
                let mut p = vec![0.0; t * t];
                for (i, &oi) in order.iter().enumerate() {
                    for (j, &oj) in order.iter().enumerate() {
                        p[i * t + j] = m[oi * t + oj];
                    }
                }
                p
            };
            maps.push(AttentionMap {
                layer,
                head,
                size: t,
                weights: permute(raw),
                ablated: permute(&abl),
                order: order.clone(),
                tokens: tokens.clone(),
                group_starts: group_starts.clone(),
            });
        }
    }
    Ok(maps)
}

/// Mean attention between items of the same first-level group, indexed by
/// (query within-group index, key within-group index). Within-group indices
/// follow target order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinGroupAttention {
    pub layer: usize,
    pub size: usize,
    /// Row-major `size x size` means; `None` where no pair was observed.
    pub mean: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Mean over input-item queries of the head-averaged attention mass on
    /// items sharing the query's group value.
    pub within_group_fraction: f64,
}

/// Within-group index of each input item, counted in target order.
fn within_group_rank(episode: &Episode, feature: usize) -> Vec<usize> {
    let mut rank = vec![0; episode.len()];
    let mut seen: BTreeMap<u8, usize> = BTreeMap::new();
    for &src in &episode.source {
        let c = seen
            .entry(episode.input[src].item.features()[feature])
            .or_default();
        rank[src] = *c;
        *c += 1;
    }
    rank
}

/// Running sums for [`within_group_attention`], fed one trace at a time.
#[derive(Debug, Clone, Default)]
pub struct WithinGroupAccumulator {
    sums: BTreeMap<(usize, usize), (f64, usize)>,
    frac_sum: f64,
    frac_n: usize,
    size: usize,
}

impl WithinGroupAccumulator {
    /// Adds one stream's attention. `probs` holds one `t x t` block per head
    /// and `lead` is the number of control tokens before the first item.
    /// Copy/reverse episodes have no groups and are skipped.
    pub fn add(&mut self, episode: &Episode, lead: usize, t: usize, probs: &[Vec<f64>]) {
        let Some(f) = episode.task.primary_feature() else {
            return;
        };
        let values: Vec<u8> = episode.input.iter().map(|x| x.item.features()[f]).collect();
        let rank = within_group_rank(episode, f);
        let heads = probs.len() as f64;
        for q in 0..values.len() {
            let mut mass = 0.0;
            for key in 0..values.len() {
                if values[key] != values[q] {
                    continue;
                }
                let w: f64 = probs
                    .iter()
                    .map(|p| p[(lead + q) * t + lead + key])
                    .sum::<f64>()
                    / heads;
                mass += w;
                let e = self.sums.entry((rank[q], rank[key])).or_default();
                e.0 += w;
                e.1 += 1;
            }
            self.frac_sum += mass;
            self.frac_n += 1;
            self.size = self.size.max(rank[q] + 1);
        }
    }

    pub fn finish(self, layer: usize) -> WithinGroupAttention {
        let size = self.size;
        let mut mean = vec![None; size * size];
        let mut counts = vec![0; size * size];
        for ((qi, ki), (s, n)) in self.sums {
            mean[qi * size + ki] = Some(s / n as f64);
            counts[qi * size + ki] = n;
        }
        WithinGroupAttention {
            layer,
            size,
            mean,
            counts,
            within_group_fraction: if self.frac_n == 0 {
                0.0
            } else {
                self.frac_sum / self.frac_n as f64
            },
        }
    }
}

/// Input-item queries attending to input-item keys with the same value of
/// the task's first-level feature, averaged over heads, groups and
/// sequences. Episodes of copy/reverse tasks are skipped.
pub fn within_group_attention(
    model: &Model,
    episodes: &[EvalEpisode],
    layer: usize,
) -> Result<WithinGroupAttention> {
    if layer >= model.config.n_layers() {
        return Err(Error::Config(format!("no layer {layer}")));
    }
    let mut acc = WithinGroupAccumulator::default();
    for e in episodes {
        if e.episode.task.primary_feature().is_none() {
            continue;
        }
        let stream = stream_for(model, e)?;
        let out = model.forward(&[&stream], &AblationSpec::none(), Readouts::Outputs, false)?;
        acc.add(
            &e.episode,
            lead(model),
            stream.len(),
            &out.trace(layer).probs,
        );
    }
    Ok(acc.finish(layer))
}

/// Attention to the input EOS for one group value at one (layer, head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EosCurve {
    pub layer: usize,
    pub head: usize,
    /// Value of the first-level feature (0-based).
    pub group: u8,
    /// `(within-group index, mean weight, count)`, only for observed bins.
    pub bins: Vec<(usize, f64, usize)>,
}

/// Running sums for [`eos_attention_profile`].
#[derive(Debug, Clone, Default)]
pub struct EosAccumulator {
    sums: BTreeMap<(usize, usize, u8, usize), (f64, usize)>,
}

impl EosAccumulator {
    /// Adds one teacher-forced stream's attention at `layer`; `probs` holds
    /// one block per head.
    pub fn add(&mut self, stream: &Stream, feature: usize, layer: usize, probs: &[Vec<f64>]) {
        let t = stream.len();
        let eos = stream.first_readout;
        let mut seen: BTreeMap<u8, usize> = BTreeMap::new();
        for q in eos + 1..t {
            let Token::Item { item, .. } = stream.tokens[q] else {
                continue;
            };
            let g = item.features()[feature];
            let c = seen.entry(g).or_default();
            let idx = *c;
            *c += 1;
            for (h, p) in probs.iter().enumerate() {
                let s = self.sums.entry((layer, h, g, idx)).or_default();
                s.0 += p[q * t + eos];
                s.1 += 1;
            }
        }
    }

    pub fn finish(self) -> Vec<EosCurve> {
        let mut curves: BTreeMap<(usize, usize, u8), EosCurve> = BTreeMap::new();
        for ((layer, head, group, idx), (s, n)) in self.sums {
            curves
                .entry((layer, head, group))
                .or_insert_with(|| EosCurve {
                    layer,
                    head,
                    group,
                    bins: Vec::new(),
                })
                .bins
                .push((idx, s / n as f64, n));
        }
        curves.into_values().collect()
    }
}

/// Attention paid to the input EOS by output-item queries, binned by the
/// query item's index within its output group, for every layer and head.
pub fn eos_attention_profile(model: &Model, episodes: &[EvalEpisode]) -> Result<Vec<EosCurve>> {
    let mut acc = EosAccumulator::default();
    for e in episodes {
        let Some(f) = e.episode.task.primary_feature() else {
            continue;
        };
        let stream = stream_for(model, e)?;
        let out = model.forward(&[&stream], &AblationSpec::none(), Readouts::Outputs, false)?;
        for layer in 0..model.config.n_layers() {
            acc.add(&stream, f, layer, &out.trace(layer).probs);
        }
    }
    Ok(acc.finish())
}

/// Tasks whose outputs form first-level groups.
pub fn grouped_tasks() -> [Task; 4] {
    [
        Task::GroupShape,
        Task::GroupColor,
        Task::SortShape,
        Task::SortColor,
    ]
}
