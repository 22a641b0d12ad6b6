//! Episodes and their token streams.
//!
//! Multi-task input is `[task] (item+label)*k [EOS]` and the target is
//! `[task] (item+label)*k [EOS]`. Single-task streams drop both task tokens.
//! During teacher forcing the model sees `input ++ target[..n-1]` and the
//! readout at the input's EOS position predicts `target[0]`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tasks::{Control, Item, LabeledItem, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Single,
    Multi,
}

/// Which integer travels with each item as its order code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderCode {
    /// The pre-drawn random ascending label.
    Label,
    /// The item's index in the input sequence. Output items carry the index
    /// of the input item they reproduce.
    Position,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub task: Task,
    pub input: Vec<LabeledItem>,
    pub target: Vec<LabeledItem>,
    /// `target[j] = input[source[j]]`.
    pub source: Vec<usize>,
}

impl Episode {
    pub fn new(task: Task, input: Vec<LabeledItem>) -> Self {
        let source = task.permutation(&input);
        let target = source.iter().map(|&i| input[i]).collect();
        Self {
            task,
            input,
            target,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Control(Control),
    Item { item: Item, code: u8 },
}

impl Token {
    pub fn is_control(&self) -> bool {
        matches!(self, Token::Control(_))
    }

    pub fn item(&self) -> Option<(Item, u8)> {
        match *self {
            Token::Item { item, code } => Some((item, code)),
            Token::Control(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedEpisode {
    pub task: Task,
    pub mode: TaskMode,
    pub input: Vec<Token>,
    pub target: Vec<Token>,
    /// For each target token, the position in `input` holding the same
    /// token (the task token, the source item, or EOS).
    pub next_source: Vec<usize>,
}

/// Encodes an episode as input and target token sequences.
pub fn encode_tokens(
    episode: &Episode,
    mode: TaskMode,
    codes: OrderCode,
) -> Result<EncodedEpisode> {
    let k = episode.len();
    let code_of = |i: usize| -> u8 {
        match codes {
            OrderCode::Label => episode.input[i].label,
            OrderCode::Position => i as u8,
        }
    };
    for x in &episode.input {
        x.item.validate()?;
    }
    let lead = usize::from(mode == TaskMode::Multi);
    let mut input = Vec::with_capacity(k + 1 + lead);
    let mut target = Vec::with_capacity(k + 1 + lead);
    let mut next_source = Vec::with_capacity(k + 1 + lead);
    if mode == TaskMode::Multi {
        input.push(Token::Control(Control::Task(episode.task)));
        target.push(Token::Control(Control::Task(episode.task)));
        next_source.push(0);
    }
    for (i, x) in episode.input.iter().enumerate() {
        input.push(Token::Item {
            item: x.item,
            code: code_of(i),
        });
    }
    input.push(Token::Control(Control::Eos));
    for &src in &episode.source {
        target.push(Token::Item {
            item: episode.input[src].item,
            code: code_of(src),
        });
        next_source.push(lead + src);
    }
    target.push(Token::Control(Control::Eos));
    next_source.push(input.len() - 1);
    Ok(EncodedEpisode {
        task: episode.task,
        mode,
        input,
        target,
        next_source,
    })
}

/// A fully teacher-forced stream with its readout targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    pub task: Task,
    pub tokens: Vec<Token>,
    /// Position of the first readout (the input EOS).
    pub first_readout: usize,
    /// Readout `r` at stream position `first_readout + r` predicts
    /// `targets[r]`.
    pub targets: Vec<Token>,
    /// Stream position holding the ground-truth next token for each readout.
    pub next_source: Vec<usize>,
    /// Number of input items.
    pub n_items: usize,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn readout_positions(&self) -> core::ops::Range<usize> {
        self.first_readout..self.first_readout + self.targets.len()
    }
}

impl EncodedEpisode {
    pub fn teacher_forced(&self) -> Stream {
        let mut tokens = self.input.clone();
        tokens.extend_from_slice(&self.target[..self.target.len() - 1]);
        Stream {
            task: self.task,
            first_readout: self.input.len() - 1,
            tokens,
            targets: self.target.clone(),
            next_source: self.next_source.clone(),
            n_items: self.target.len() - 1 - usize::from(self.mode == TaskMode::Multi),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn episode(task: Task) -> Episode {
        let items = [(2, 0, 0, 3), (0, 1, 1, 5), (2, 3, 3, 8), (1, 4, 4, 9)];
        let input = items
            .iter()
            .map(|&(s, c, t, l)| LabeledItem {
                item: Item::new(s, c, t).unwrap(),
                label: l,
            })
            .collect();
        Episode::new(task, input)
    }

    #[test]
    fn multi_task_stream_lengths() {
        let ep = episode(Task::GroupShape);
        let enc = encode_tokens(&ep, TaskMode::Multi, OrderCode::Label).unwrap();
        assert_eq!(enc.input.len(), 2 + 4);
        assert_eq!(enc.target.len(), 2 + 4);
        assert_eq!(
            enc.target[0],
            Token::Control(Control::Task(Task::GroupShape))
        );
        assert_eq!(enc.input[5], Token::Control(Control::Eos));
        assert_eq!(enc.next_source, vec![0, 2, 4, 1, 3, 5]);
        let s = enc.teacher_forced();
        assert_eq!(s.len(), 6 + 5);
        assert_eq!(s.first_readout, 5);
        assert_eq!(s.n_items, 4);
    }

    #[test]
    fn single_task_has_no_task_tokens() {
        let ep = episode(Task::SortShape);
        let enc = encode_tokens(&ep, TaskMode::Single, OrderCode::Label).unwrap();
        let s = enc.teacher_forced();
        assert!(s
            .tokens
            .iter()
            .chain(&s.targets)
            .all(|t| !matches!(t, Token::Control(Control::Task(_)))));
        assert_eq!(s.targets.len(), 5);
        assert_eq!(s.first_readout, 4);
    }

    #[test]
    fn position_codes_follow_source_items() {
        let ep = episode(Task::Reverse);
        let enc = encode_tokens(&ep, TaskMode::Single, OrderCode::Position).unwrap();
        let codes: Vec<u8> = enc
            .target
            .iter()
            .filter_map(|t| t.item())
            .map(|x| x.1)
            .collect();
        assert_eq!(codes, vec![3, 2, 1, 0]);
    }
}
