//! Items, task identities and the six rearrangement oracles.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of values per feature.
pub const FEATURE_VALUES: usize = 5;
/// Number of features per item (shape, color, texture).
pub const FEATURES: usize = 3;
/// Width of the item multihot vector.
pub const ITEM_DIMS: usize = FEATURES * FEATURE_VALUES;
/// Task classes plus end-of-sequence.
pub const CONTROL_CLASSES: usize = 7;

/// One pool element. The index of each feature value is also its rank in
/// the predefined sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Item {
    pub shape: u8,
    pub color: u8,
    pub texture: u8,
}

impl Item {
    pub fn new(shape: u8, color: u8, texture: u8) -> Result<Self> {
        let item = Self {
            shape,
            color,
            texture,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shape", self.shape),
            ("color", self.color),
            ("texture", self.texture),
        ] {
            if v as usize >= FEATURE_VALUES {
                return Err(Error::Encoding(alloc::format!(
                    "{name} index {v} is outside 0..{FEATURE_VALUES}"
                )));
            }
        }
        Ok(())
    }

    pub fn features(&self) -> [u8; FEATURES] {
        [self.shape, self.color, self.texture]
    }

    pub fn from_features(f: [u8; FEATURES]) -> Self {
        Self {
            shape: f[0],
            color: f[1],
            texture: f[2],
        }
    }

    /// Three concatenated one-hot blocks: shape, color, texture.
    pub fn multihot(&self) -> Result<[f64; ITEM_DIMS]> {
        self.validate()?;
        let mut v = [0.0; ITEM_DIMS];
        for (f, value) in self.features().into_iter().enumerate() {
            v[f * FEATURE_VALUES + value as usize] = 1.0;
        }
        Ok(v)
    }
}

/// An item paired with its order label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item: Item,
    pub label: u8,
}

/// All 125 items in lexicographic (shape, color, texture) order.
pub fn build_item_pool() -> Vec<Item> {
    let n = FEATURE_VALUES as u8;
    let mut pool = Vec::with_capacity(FEATURE_VALUES.pow(3));
    for s in 0..n {
        for c in 0..n {
            for t in 0..n {
                pool.push(Item {
                    shape: s,
                    color: c,
                    texture: t,
                });
            }
        }
    }
    pool
}

/// Serialized by its short name (`"S[s]"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Copy,
    Reverse,
    GroupShape,
    GroupColor,
    SortShape,
    SortColor,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Copy,
        Task::Reverse,
        Task::GroupShape,
        Task::GroupColor,
        Task::SortShape,
        Task::SortColor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Copy => "C",
            Task::Reverse => "R",
            Task::GroupShape => "G[s]",
            Task::GroupColor => "G[c]",
            Task::SortShape => "S[s]",
            Task::SortColor => "S[c]",
        }
    }

    /// Feature whose value defines the first-level groups, if any.
    pub fn primary_feature(self) -> Option<usize> {
        match self {
            Task::GroupShape | Task::SortShape => Some(0),
            Task::GroupColor | Task::SortColor => Some(1),
            Task::Copy | Task::Reverse => None,
        }
    }

    /// Rearranges `input` according to the task rule. Sorting and grouping
    /// are stable, so identical keys keep their input order.
    pub fn apply(self, input: &[LabeledItem]) -> Vec<LabeledItem> {
        let mut out = input.to_vec();
        match self {
            Task::Copy => {}
            Task::Reverse => out.reverse(),
            Task::GroupShape => out.sort_by_key(|x| x.item.shape),
            Task::GroupColor => out.sort_by_key(|x| x.item.color),
            Task::SortShape => out.sort_by_key(|x| (x.item.shape, x.item.color, x.item.texture)),
            Task::SortColor => out.sort_by_key(|x| (x.item.color, x.item.shape, x.item.texture)),
        }
        out
    }

    /// Input positions in output order: `out[j] = input[perm[j]]`.
    pub fn permutation(self, input: &[LabeledItem]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..input.len()).collect();
        let it = |i: &usize| input[*i].item;
        match self {
            Task::Copy => {}
            Task::Reverse => idx.reverse(),
            Task::GroupShape => idx.sort_by_key(|i| it(i).shape),
            Task::GroupColor => idx.sort_by_key(|i| it(i).color),
            Task::SortShape => idx.sort_by_key(|i| {
                let x = it(i);
                (x.shape, x.color, x.texture)
            }),
            Task::SortColor => idx.sort_by_key(|i| {
                let x = it(i);
                (x.color, x.shape, x.texture)
            }),
        }
        idx
    }
}

/// Oracle for a task; see [`Task::apply`].
pub fn apply_task(task: Task, input: &[LabeledItem]) -> Vec<LabeledItem> {
    task.apply(input)
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(alloc::format!("unknown task {s:?}")))
    }
}

impl Serialize for Task {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = alloc::string::String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Control vocabulary: the six task tokens and end-of-sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Task(Task),
    Eos,
}

impl Control {
    pub const EOS_INDEX: usize = 6;

    pub fn index(self) -> usize {
        match self {
            Control::Task(t) => t.index(),
            Control::Eos => Self::EOS_INDEX,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i == Self::EOS_INDEX {
            Some(Control::Eos)
        } else {
            Task::from_index(i).map(Control::Task)
        }
    }

    pub fn onehot(self) -> [f64; CONTROL_CLASSES] {
        let mut v = [0.0; CONTROL_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn li(s: u8, c: u8, t: u8, label: u8) -> LabeledItem {
        LabeledItem {
            item: Item::new(s, c, t).unwrap(),
            label,
        }
    }

    #[test]
    fn pool_enumeration() {
        let pool = build_item_pool();
        assert_eq!(pool.len(), 125);
        assert_eq!(pool[0], Item::new(0, 0, 0).unwrap());
        assert_eq!(pool[124], Item::new(4, 4, 4).unwrap());
        let mut dedup = pool.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 125);
    }

    #[test]
    fn copy_is_identity() {
        let x = vec![li(1, 2, 3, 7)];
        assert_eq!(Task::Copy.apply(&x), x);
    }

    #[test]
    fn group_shape_is_stable_partition() {
        let x = vec![
            li(2, 0, 0, 3),
            li(0, 1, 1, 5),
            li(2, 3, 3, 8),
            li(1, 4, 4, 9),
        ];
        assert_eq!(Task::GroupShape.permutation(&x), vec![1, 3, 0, 2]);
        let out = Task::GroupShape.apply(&x);
        assert_eq!(
            out.iter().map(|x| x.label).collect::<Vec<_>>(),
            vec![5, 9, 3, 8]
        );
    }

    #[test]
    fn sort_shape_keeps_identical_items_in_input_order() {
        let x = vec![li(1, 0, 0, 2), li(0, 4, 4, 6), li(1, 0, 0, 11)];
        assert_eq!(Task::SortShape.permutation(&x), vec![1, 0, 2]);
        assert_eq!(Task::SortShape.apply(&x)[2].label, 11);
    }

    #[test]
    fn sort_color_uses_color_first() {
        let x = vec![li(0, 3, 0, 1), li(4, 1, 0, 2), li(2, 1, 0, 3)];
        assert_eq!(Task::SortColor.permutation(&x), vec![2, 1, 0]);
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("X".parse::<Task>().is_err());
    }

    #[test]
    fn multihot_and_control_encoding() {
        let v = Item::new(0, 0, 0).unwrap().multihot().unwrap();
        let ones: Vec<usize> = (0..ITEM_DIMS).filter(|&i| v[i] == 1.0).collect();
        assert_eq!(ones, vec![0, 5, 10]);
        assert_eq!(Control::Eos.onehot()[6], 1.0);
        let bad = Item {
            shape: 5,
            color: 0,
            texture: 0,
        };
        assert!(matches!(bad.multihot(), Err(Error::Encoding(_))));
    }
}
