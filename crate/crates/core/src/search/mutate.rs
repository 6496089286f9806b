//! The one-task move that drives the local search.

use rand::Rng;

use super::partition::{GroupKey, Partition};

/// Moves one uniformly chosen task to another group.
///
/// If the task was alone, its old group dissolves and the task joins one of
/// the surviving groups. Otherwise the destination is drawn uniformly from
/// the other existing groups plus one fresh singleton. The result always
/// differs from the input in exactly one task's membership.
pub fn mutate_groups<R: Rng>(p: &Partition, all_ids: &[String], rng: &mut R) -> Partition {
    assert!(all_ids.len() >= 2, "mutation needs at least two tasks");
    let t = &all_ids[rng.random_range(0..all_ids.len())];
    let old_idx = p
        .groups()
        .iter()
        .position(|g| g.contains(t))
        .expect("task not in partition");
    let old = &p.groups()[old_idx];

    let mut groups: Vec<Vec<String>> = p
        .groups()
        .iter()
        .map(|g| g.ids().to_vec())
        .collect();

    if old.len() == 1 {
        // the old group dissolves; join one of the survivors
        groups.remove(old_idx);
        let dest = rng.random_range(0..groups.len());
        groups[dest].push(t.clone());
    } else {
        groups[old_idx].retain(|id| id != t);
        // destinations: every other existing group, plus a fresh singleton
        let n_existing = groups.len() - 1;
        let choice = rng.random_range(0..=n_existing);
        if choice == n_existing {
            groups.push(vec![t.clone()]);
        } else {
            // map choice over the groups, skipping the old one
            let dest = if choice < old_idx { choice } else { choice + 1 };
            groups[dest].push(t.clone());
        }
    }

    let keys: Vec<GroupKey> = groups.into_iter().map(GroupKey::new).collect();
    Partition::new(keys, all_ids).expect("mutation broke the cover invariant")
}

/// True when `b` is `a` with exactly one task moved to a different group:
/// the partitions differ, and deleting some single task from both makes
/// them identical.
pub fn is_single_task_move(a: &Partition, b: &Partition, all_ids: &[String]) -> bool {
    if a == b {
        return false;
    }
    all_ids
        .iter()
        .any(|t| restrict_without(a, t) == restrict_without(b, t))
}

fn restrict_without(p: &Partition, task: &str) -> Vec<Vec<String>> {
    let mut groups: Vec<Vec<String>> = p
        .groups()
        .iter()
        .map(|g| {
            g.ids()
                .iter()
                .filter(|id| id.as_str() != task)
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|g: &Vec<String>| !g.is_empty())
        .collect();
    groups.sort();
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn singleton_merge_is_forced() {
        // {{a},{b,c}}: drawing a must produce {{a,b,c}}
        let all = ids(&["a", "b", "c"]);
        let p = Partition::new(
            vec![GroupKey::new(["a"]), GroupKey::new(["b", "c"])],
            &all,
        )
        .unwrap();
        let mut rng = rng_for(0, &["m"]);
        for _ in 0..200 {
            let q = mutate_groups(&p, &all, &mut rng);
            if q.n_groups() == 1 {
                assert_eq!(q.groups()[0].len(), 3);
            }
        }
    }

    #[test]
    fn split_from_single_group_is_forced() {
        // {{a,b}}: only possible move is splitting off a singleton
        let all = ids(&["a", "b"]);
        let p = Partition::one_group(&all);
        let mut rng = rng_for(1, &["m"]);
        for _ in 0..50 {
            let q = mutate_groups(&p, &all, &mut rng);
            assert_eq!(q.n_groups(), 2);
        }
    }

    #[test]
    fn all_singletons_always_merge_to_two_groups() {
        let all = ids(&["a", "b", "c"]);
        let p = Partition::singletons(&all);
        let mut rng = rng_for(2, &["m"]);
        for _ in 0..300 {
            let q = mutate_groups(&p, &all, &mut rng);
            assert_eq!(q.n_groups(), 2, "got {q}");
        }
    }

    #[test]
    fn mutation_moves_exactly_one_task() {
        let all: Vec<String> = (0..9).map(|i| format!("t{i}")).collect();
        let mut rng = rng_for(3, &["m"]);
        let mut p = crate::search::sample::sample_uniform_partition(&all, &mut rng);
        for _ in 0..2000 {
            let q = mutate_groups(&p, &all, &mut rng);
            q.validate_cover(&all).unwrap();
            assert!(is_single_task_move(&p, &q, &all), "{p} -> {q}");
            p = q;
        }
    }

    #[test]
    fn single_move_check_rejects_swaps_and_identity() {
        let all = ids(&["a", "b", "x", "y"]);
        let p = Partition::new(
            vec![GroupKey::new(["a", "x"]), GroupKey::new(["b", "y"])],
            &all,
        )
        .unwrap();
        let swapped = Partition::new(
            vec![GroupKey::new(["b", "x"]), GroupKey::new(["a", "y"])],
            &all,
        )
        .unwrap();
        assert!(!is_single_task_move(&p, &p, &all));
        assert!(!is_single_task_move(&p, &swapped, &all));
        let moved = Partition::new(
            vec![GroupKey::new(["a", "x", "b"]), GroupKey::new(["y"])],
            &all,
        )
        .unwrap();
        assert!(is_single_task_move(&p, &moved, &all));
    }
}
