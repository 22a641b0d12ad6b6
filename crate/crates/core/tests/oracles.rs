use labelformer_core::tasks::{Item, LabeledItem, Task};
use proptest::prelude::*;

fn items(max_len: usize, values: u8) -> impl Strategy<Value = Vec<LabeledItem>> {
    prop::collection::vec((0..values, 0..values, 0..values), 1..=max_len).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, c, t))| LabeledItem {
                item: Item::new(s, c, t).unwrap(),
                label: i as u8,
            })
            .collect()
    })
}

fn sort_key(task: Task, x: &LabeledItem) -> [u8; 3] {
    let f = x.item.features();
    match task {
        Task::SortShape => [f[0], f[1], f[2]],
        Task::SortColor => [f[1], f[0], f[2]],
        Task::GroupShape => [f[0], 0, 0],
        Task::GroupColor => [f[1], 0, 0],
        Task::Copy | Task::Reverse => unreachable!(),
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Among all orderings with non-decreasing keys, the one whose label
/// sequence is lexicographically smallest; labels ascend with input
/// position, so this is the stable order.
fn brute_force(task: Task, input: &[LabeledItem]) -> Vec<LabeledItem> {
    permutations(input.len())
        .into_iter()
        .map(|p| p.iter().map(|&i| input[i]).collect::<Vec<_>>())
        .filter(|o| {
            o.windows(2)
                .all(|w| sort_key(task, &w[0]) <= sort_key(task, &w[1]))
        })
        .min_by_key(|o| o.iter().map(|x| x.label).collect::<Vec<_>>())
        .unwrap()
}

fn multiset(xs: &[LabeledItem]) -> Vec<(u8, [u8; 3])> {
    let mut v: Vec<_> = xs.iter().map(|x| (x.label, x.item.features())).collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn task_invariants(input in items(50, 5)) {
        let rev = Task::Reverse.apply(&input);
        prop_assert_eq!(Task::Reverse.apply(&rev), input.clone());
        prop_assert_eq!(Task::Copy.apply(&input), input.clone());
        for task in Task::ALL {
            let out = task.apply(&input);
            prop_assert_eq!(multiset(&out), multiset(&input));
            let perm = task.permutation(&input);
            let via_perm: Vec<_> = perm.iter().map(|&i| input[i]).collect();
            prop_assert_eq!(&via_perm, &out);
            if task.primary_feature().is_some() {
                prop_assert!(out.windows(2).all(|w| sort_key(task, &w[0]) <= sort_key(task, &w[1])));
                // Equal keys keep ascending labels.
                prop_assert!(out
                    .windows(2)
                    .all(|w| sort_key(task, &w[0]) != sort_key(task, &w[1]) || w[0].label < w[1].label));
            }
        }
    }

    #[test]
    fn matches_brute_force_on_short_sequences(input in items(6, 2)) {
        for task in [Task::GroupShape, Task::GroupColor, Task::SortShape, Task::SortColor] {
            prop_assert_eq!(task.apply(&input), brute_force(task, &input));
        }
    }
}
