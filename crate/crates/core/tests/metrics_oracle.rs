mod common;

use proptest::prelude::*;
use snakezero::env::Cell;
use snakezero::metrics::{complement_components, dynamic_distance, reachable, ReachTarget};
use snakezero::GameState;

fn neighbours(c: Cell, n: usize) -> Vec<Cell> {
    snakezero::Action::ALL
        .iter()
        .filter_map(|&a| c.neighbor(a, n))
        .collect()
}

/// Depth-first enumeration of simple paths through free cells.
fn some_path(s: &GameState, from: Cell, goal: &dyn Fn(Cell) -> bool, seen: &mut Vec<Cell>) -> bool {
    for nb in neighbours(from, s.n()) {
        if s.is_occupied(nb) || seen.contains(&nb) {
            continue;
        }
        if goal(nb) {
            return true;
        }
        seen.push(nb);
        if some_path(s, nb, goal, seen) {
            return true;
        }
        seen.pop();
    }
    false
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn union_find_components(s: &GameState) -> usize {
    let n = s.n();
    let mut parent: Vec<usize> = (0..n * n).collect();
    for i in 0..n * n {
        let c = Cell::from_index(i, n);
        if s.is_occupied(c) {
            continue;
        }
        for nb in neighbours(c, n) {
            if !s.is_occupied(nb) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, nb.index(n)));
                parent[a] = b;
            }
        }
    }
    (0..n * n)
        .filter(|&i| !s.is_occupied(Cell::from_index(i, n)) && find(&mut parent, i) == i)
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reachability_matches_path_enumeration(seed in any::<u64>()) {
        for s in common::random_states(4, 8, seed) {
            let apple = s.apple();
            let apple_goal = |c: Cell| Some(c) == apple;
            prop_assert_eq!(
                reachable(&s, ReachTarget::Apple),
                some_path(&s, s.head(), &apple_goal, &mut Vec::new())
            );
            let tail = s.tail();
            let tail_goal = |c: Cell| c.is_adjacent(tail);
            let direct = s.head().is_adjacent(tail);
            prop_assert_eq!(
                reachable(&s, ReachTarget::Tail),
                direct || some_path(&s, s.head(), &tail_goal, &mut Vec::new())
            );
        }
    }

    #[test]
    fn components_match_union_find(seed in any::<u64>()) {
        for s in common::random_states(5, 8, seed) {
            prop_assert_eq!(complement_components(&s), union_find_components(&s));
        }
    }

    #[test]
    fn dynamic_distance_is_at_least_manhattan(seed in any::<u64>()) {
        for s in common::random_states(5, 8, seed) {
            if let (Some(d), Some(a)) = (dynamic_distance(&s), s.apple()) {
                let h = s.head();
                let manhattan = h.row.abs_diff(a.row) as u32 + h.col.abs_diff(a.col) as u32;
                prop_assert!(d >= manhattan);
            }
        }
    }
}
