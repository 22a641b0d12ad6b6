use labelformer_core::analysis::{gaussian_order_fit, pca, SigmaGrid};
use labelformer_core::autodiff::Tape;
use labelformer_core::eval::{
    sequence_thresholds, summarize, DecodeMode, TargetKind, TokenOutcome,
};
use labelformer_core::model::{AblationSpec, Encoding, KeepSet, Model, ModelConfig, Readouts};
use labelformer_core::tasks::{Item, LabeledItem, Task};
use labelformer_core::tensor::Tensor;
use labelformer_core::tokens::{encode_tokens, Episode, OrderCode, TaskMode, Token};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn episode(task: Task, raw: &[(u8, u8, u8)]) -> Episode {
    let input = raw
        .iter()
        .enumerate()
        .map(|(i, &(s, c, t))| LabeledItem {
            item: Item::new(s, c, t).unwrap(),
            label: (2 * i) as u8,
        })
        .collect();
    Episode::new(task, input)
}

fn raw_items(max: usize) -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    prop::collection::vec((0u8..5, 0u8..5, 0u8..5), 2..=max)
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u32>()) {
        let data: Vec<f64> = (0..rows * cols).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 2000) as f64 / 100.0 - 10.0).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, cols], data).unwrap(), false);
        let y = tape.softmax(x, None).unwrap();
        for r in 0..rows {
            let s: f64 = tape.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    /// Perturbing the token at `cut` leaves every readout before it
    /// bit-identical.
    #[test]
    fn future_tokens_do_not_leak(
        raw in raw_items(8),
        task_i in 0usize..6,
        cut_frac in 0.0f64..1.0,
        seed in 0u64..1000,
        multi in any::<bool>(),
    ) {
        let mode = if multi { TaskMode::Multi } else { TaskMode::Single };
        let model = Model::new(ModelConfig::new(vec![1, 2], 16, Encoding::Label, mode), seed).unwrap();
        let e = episode(Task::ALL[task_i], &raw);
        let s = encode_tokens(&e, mode, OrderCode::Label).unwrap().teacher_forced();
        let cut = ((s.len() as f64 * cut_frac) as usize).min(s.len() - 1);
        let mut t = s.clone();
        t.tokens[cut] = match t.tokens[cut] {
            Token::Item { item, code } => Token::Item { item: Item::new((item.shape + 1) % 5, item.color, item.texture).unwrap(), code },
            Token::Control(_) => Token::Item { item: Item::new(0, 0, 0).unwrap(), code: 3 },
        };
        let a = model.forward(&[&s], &AblationSpec::none(), Readouts::All, false).unwrap();
        let b = model.forward(&[&t], &AblationSpec::none(), Readouts::All, false).unwrap();
        for r in 0..cut {
            prop_assert_eq!(a.logits(r), b.logits(r));
        }
    }

    #[test]
    fn keep_everything_is_identity(raw in raw_items(10), task_i in 0usize..6, seed in 0u64..1000) {
        let model = Model::new(ModelConfig::new(vec![2, 2], 16, Encoding::Label, TaskMode::Multi), seed).unwrap();
        let e = episode(Task::ALL[task_i], &raw);
        let s = encode_tokens(&e, TaskMode::Multi, OrderCode::Label).unwrap().teacher_forced();
        let base = model.forward(&[&s], &AblationSpec::none(), Readouts::Outputs, false).unwrap();
        let keep = AblationSpec::preserve(vec![(0, KeepSet::ALL), (1, KeepSet::ALL)]);
        let same = model.forward(&[&s], &keep, Readouts::Outputs, false).unwrap();
        for r in 0..s.targets.len() {
            prop_assert_eq!(base.logits(r), same.logits(r));
        }
    }

    /// An orthogonal map of the embedding space leaves every dot product,
    /// hence the fit, unchanged.
    #[test]
    fn gaussian_fit_is_rotation_invariant(seed in any::<u64>()) {
        let mut x = seed | 1;
        let mut next = move || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; (x % 2001) as f64 / 1000.0 - 1.0 };
        let block: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| next()).collect()).collect();
        let q = DMatrix::from_fn(4, 4, |_, _| next()).qr().q();
        let rotated: Vec<Vec<f64>> = block
            .iter()
            .map(|r| (0..4).map(|j| (0..4).map(|k| r[k] * q[(k, j)]).sum()).collect())
            .collect();
        let grid = SigmaGrid::default();
        let a = gaussian_order_fit(&block, &grid).unwrap();
        let b = gaussian_order_fit(&rotated, &grid).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-9 * (1.0 + a.loss));
        prop_assert!((a.sigma - b.sigma).abs() < 1e-9 || (a.loss - b.loss).abs() < 1e-12);
    }

    /// i.i.d. embeddings: the kernel fit is never worse than fitting a
    /// single constant to all pairs, since the widest kernel is nearly flat.
    #[test]
    fn gaussian_fit_beats_near_constant(seed in any::<u64>()) {
        let mut x = seed | 1;
        let mut next = move || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; (x % 2001) as f64 / 1000.0 - 1.0 };
        let block: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| next()).collect()).collect();
        let fit = gaussian_order_fit(&block, &SigmaGrid::default()).unwrap();
        let wide = gaussian_order_fit(&block, &SigmaGrid { min: 10.0, max: 10.0, step: 1.0 }).unwrap();
        prop_assert!(fit.loss <= wide.loss);
    }

    #[test]
    fn pca_agrees_with_independent_eigensolver(seed in any::<u64>()) {
        let mut x = seed | 1;
        let mut next = move || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; (x % 20001) as f64 / 10000.0 - 1.0 };
        let scales = [3.0, 2.0, 1.5, 1.0, 0.7, 0.5, 0.3, 0.1];
        let data: Vec<Vec<f64>> = (0..25).map(|_| scales.iter().map(|s| s * next()).collect()).collect();
        let ours = pca(&data, 2).unwrap();

        let m = DMatrix::from_fn(25, 8, |i, j| data[i][j]);
        let mean = m.row_mean();
        let c = DMatrix::from_fn(25, 8, |i, j| m[(i, j)] - mean[j]);
        let cov = c.transpose() * &c / 24.0;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let theirs = DMatrix::from_fn(8, 2, |i, k| eig.eigenvectors[(i, order[k])]);
        let mine = DMatrix::from_fn(8, 2, |i, k| ours.components[k][i]);
        // Largest principal angle between the two 2-d subspaces.
        let sv = (mine.transpose() * theirs).singular_values();
        let min_cos = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
        prop_assert!(min_cos.acos() < 1e-6, "angle {}", min_cos.acos());
        for k in 0..2 {
            prop_assert!((ours.explained_variance[k] - eig.eigenvalues[order[k]]).abs() < 1e-10);
        }
        for a in 0..2 {
            for b in 0..2 {
                let d: f64 = ours.components[a].iter().zip(&ours.components[b]).map(|(x, y)| x * y).sum();
                prop_assert!((d - f64::from(u8::from(a == b))).abs() < 1e-8);
            }
        }
    }

    /// Item accuracy recomputed from raw outcomes equals the report, and
    /// threshold rates never increase with the threshold.
    #[test]
    fn metrics_decompose(
        raw in prop::collection::vec((0u64..20, 0u8..4, any::<bool>(), 1usize..30), 1..300),
        thresholds in prop::collection::vec(0.0f64..=1.0, 2..8),
    ) {
        let outcomes: Vec<TokenOutcome> = raw
            .iter()
            .enumerate()
            .map(|(i, &(seq, f, l, len))| TokenOutcome {
                seq_id: seq,
                task: Task::SortShape,
                seq_len: len,
                position: i % len,
                kind: TargetKind::Item,
                features_correct: f,
                label_correct: l,
                control_correct: None,
            })
            .collect();
        let report = summarize(DecodeMode::TeacherForcing, &outcomes).unwrap();
        let direct = outcomes.iter().map(|o| f64::from(o.features_correct) / 3.0).sum::<f64>() / outcomes.len() as f64;
        prop_assert!((report.item_accuracy - direct).abs() <= 1e-12);
        let mut ts = thresholds.clone();
        ts.sort_by(f64::total_cmp);
        let rates = sequence_thresholds(&outcomes, &ts).unwrap();
        prop_assert!(rates.windows(2).all(|w| w[0].1 >= w[1].1));
        let weighted: f64 = report.by_length.iter().map(|s| s.item_accuracy * s.n_tokens as f64).sum::<f64>()
            / report.n_item_tokens as f64;
        prop_assert!((weighted - report.item_accuracy).abs() <= 1e-12);
    }
}
