//! Dataset generation with pre-drawn ascending order labels.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{build_item_pool, Item, LabeledItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Generalization,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Generalization => "generalization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: u64,
    pub split: Split,
    pub items: Vec<LabeledItem>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Labels are drawn from `0..label_range`.
    pub label_range: usize,
    /// Sequences up to this length form the training split.
    pub train_max_len: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_sequences: 100_000,
            min_len: 5,
            max_len: 50,
            label_range: 50,
            train_max_len: 25,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.label_range < self.max_len {
            return Err(Error::Config(format!(
                "label range {} is smaller than the maximum length {}",
                self.label_range, self.max_len
            )));
        }
        if self.label_range > u8::MAX as usize + 1 {
            return Err(Error::Config(format!(
                "label range {} exceeds 256",
                self.label_range
            )));
        }
        Ok(())
    }

    pub fn split_of(&self, len: usize) -> Split {
        if len <= self.train_max_len {
            Split::Train
        } else {
            Split::Generalization
        }
    }
}

/// Per-length counts for `n` sequences over `min..=max`: an equal share for
/// every length, with the remainder going one each to the shortest lengths.
pub fn length_counts(n: usize, min_len: usize, max_len: usize) -> Vec<(usize, usize)> {
    let k = max_len - min_len + 1;
    let (base, rem) = (n / k, n % k);
    (0..k)
        .map(|i| (min_len + i, base + usize::from(i < rem)))
        .collect()
}

fn draw_items(
    rng: &mut ChaCha8Rng,
    pool: &[Item],
    len: usize,
    label_range: usize,
) -> Vec<LabeledItem> {
    let mut labels = index::sample(rng, label_range, len).into_vec();
    labels.sort_unstable();
    labels
        .into_iter()
        .map(|label| LabeledItem {
            item: pool[rng.gen_range(0..pool.len())],
            label: label as u8,
        })
        .collect()
}

/// Generates the full dataset. Items are drawn with replacement from the
/// pool; each sequence gets distinct labels sorted ascending.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SequenceRecord>> {
    spec.validate()?;
    let pool = build_item_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_sequences);
    for (len, count) in length_counts(spec.n_sequences, spec.min_len, spec.max_len) {
        for _ in 0..count {
            let items = draw_items(&mut rng, &pool, len, spec.label_range);
            out.push(SequenceRecord {
                id: out.len() as u64,
                split: spec.split_of(len),
                items,
            });
        }
    }
    Ok(out)
}

/// Request for freshly sampled evaluation sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub min_len: usize,
    pub max_len: usize,
    pub label_range: usize,
    pub split: Split,
}

/// Content-identity set used to keep evaluation sequences novel.
#[derive(Debug, Clone, Default)]
pub struct ContentIndex(BTreeSet<Vec<LabeledItem>>);

impl ContentIndex {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a SequenceRecord>) -> Self {
        Self(records.into_iter().map(|r| r.items.clone()).collect())
    }

    pub fn contains(&self, items: &[LabeledItem]) -> bool {
        self.0.contains(items)
    }

    fn insert(&mut self, items: Vec<LabeledItem>) -> bool {
        self.0.insert(items)
    }
}

const MAX_DRAW_ATTEMPTS: usize = 1000;

/// Samples `n` sequences with lengths balanced over the requested range.
/// Draws use a ChaCha stream separate from dataset generation, and no
/// returned sequence is content-identical to one in `exclude` or to another
/// returned sequence.
pub fn sample_eval_sequences(
    spec: &SampleSpec,
    n: usize,
    seed: u64,
    exclude: &ContentIndex,
) -> Result<Vec<SequenceRecord>> {
    if spec.min_len == 0 || spec.min_len > spec.max_len || spec.label_range < spec.max_len {
        return Err(Error::Config(format!("invalid sample spec {spec:?}")));
    }
    let pool = build_item_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut seen = ContentIndex::default();
    let mut out = Vec::with_capacity(n);
    for (len, count) in length_counts(n, spec.min_len, spec.max_len) {
        for _ in 0..count {
            let mut attempts = 0;
            let items = loop {
                let items = draw_items(&mut rng, &pool, len, spec.label_range);
                if !exclude.contains(&items) && seen.insert(items.clone()) {
                    break items;
                }
                attempts += 1;
                if attempts >= MAX_DRAW_ATTEMPTS {
                    return Err(Error::Config(format!(
                        "could not draw a novel sequence of length {len}"
                    )));
                }
            };
            out.push(SequenceRecord {
                id: out.len() as u64,
                split: spec.split,
                items,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let counts = length_counts(100_000, 5, 50);
        let train: usize = counts
            .iter()
            .filter(|(l, _)| *l <= 25)
            .map(|(_, c)| c)
            .sum();
        let gen: usize = counts.iter().filter(|(l, _)| *l > 25).map(|(_, c)| c).sum();
        // 100000 = 46 * 2173 + 42; lengths 5..=46 carry one extra sequence.
        assert_eq!(train, 45_654);
        assert_eq!(gen, 54_346);
    }

    #[test]
    fn labels_strictly_ascending_and_splits_by_length() {
        let spec = DatasetSpec {
            n_sequences: 2000,
            ..DatasetSpec::default()
        };
        let data = generate_dataset(&spec).unwrap();
        assert_eq!(data.len(), 2000);
        for r in &data {
            assert!((5..=50).contains(&r.len()));
            assert!(r.items.windows(2).all(|w| w[0].label < w[1].label));
            assert!(r.items.iter().all(|x| (x.label as usize) < 50));
            assert_eq!(r.split == Split::Train, r.len() <= 25);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DatasetSpec {
            n_sequences: 300,
            seed: 9,
            ..DatasetSpec::default()
        };
        assert_eq!(
            generate_dataset(&spec).unwrap(),
            generate_dataset(&spec).unwrap()
        );
    }

    #[test]
    fn label_range_below_max_len_is_config_error() {
        let spec = DatasetSpec {
            label_range: 10,
            ..DatasetSpec::default()
        };
        assert!(matches!(generate_dataset(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn eval_samples_are_novel_and_in_range() {
        let spec = DatasetSpec {
            n_sequences: 3000,
            min_len: 5,
            max_len: 8,
            label_range: 10,
            train_max_len: 8,
            seed: 1,
        };
        let train = generate_dataset(&spec).unwrap();
        let exclude = ContentIndex::new(&train);
        let s = SampleSpec {
            min_len: 5,
            max_len: 8,
            label_range: 10,
            split: Split::Train,
        };
        let a = sample_eval_sequences(&s, 500, 3, &exclude).unwrap();
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|r| !exclude.contains(&r.items)));
        assert!(a.iter().all(|r| (5..=8).contains(&r.len())));
        assert_eq!(a, sample_eval_sequences(&s, 500, 3, &exclude).unwrap());
    }
}
