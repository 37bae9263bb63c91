//! Behavioral metrics over played games, aggregated over states whose snake
//! length falls in a window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Action, AppleSource, Cell, GameState};
use crate::error::{Error, Result};

/// Every state of one game in order, with the move taken from each
/// non-final state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<GameState>,
    pub actions: Vec<Action>,
}

pub fn perimeter_fraction(states: &[GameState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::contract("empty trajectory"));
    }
    let on = states.iter().filter(|s| s.head().on_border(s.n())).count();
    Ok(on as f64 / states.len() as f64)
}

pub fn turn_fraction(actions: &[Action]) -> Result<f64> {
    if actions.len() < 2 {
        return Err(Error::contract("need at least two moves"));
    }
    let turns = actions.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(turns as f64 / (actions.len() - 1) as f64)
}

fn neighbors(c: Cell, n: usize) -> impl Iterator<Item = Cell> {
    Action::ALL
        .into_iter()
        .filter_map(move |a| c.neighbor(a, n))
}

/// Breadth-first distances over free cells from `from`; body cells are
/// walls. `from` itself may be occupied (it is the head).
fn free_distances(state: &GameState, from: Cell) -> Vec<u32> {
    let n = state.n();
    let mut dist = vec![u32::MAX; n * n];
    let mut queue = VecDeque::new();
    dist[from.index(n)] = 0;
    queue.push_back(from);
    while let Some(c) = queue.pop_front() {
        let d = dist[c.index(n)];
        for nb in neighbors(c, n) {
            let i = nb.index(n);
            if dist[i] == u32::MAX && !state.is_occupied(nb) {
                dist[i] = d + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReachTarget {
    Apple,
    Tail,
}

/// Whether the head can reach the target through free cells, treating the
/// body as fixed in place.
pub fn reachable(state: &GameState, target: ReachTarget) -> bool {
    let n = state.n();
    let dist = free_distances(state, state.head());
    match target {
        ReachTarget::Apple => state.apple().is_some_and(|a| dist[a.index(n)] != u32::MAX),
        ReachTarget::Tail => neighbors(state.tail(), n).any(|c| dist[c.index(n)] != u32::MAX),
    }
}

/// Steps taken by a walker that always follows a current shortest
/// body-avoiding path to the apple while the body moves behind it. `None`
/// when the apple becomes unreachable or the walk exceeds `n⁴` steps.
pub fn dynamic_distance(state: &GameState) -> Option<u32> {
    let apple = state.apple()?;
    if state.is_terminal() {
        return None;
    }
    let n = state.n();
    let cap = (n as u64).pow(4);
    let mut s = state.clone().with_time_limit(None);
    let mut steps = 0u32;
    while (steps as u64) < cap {
        let dist = free_distances(&s, apple);
        let head = s.head();
        let best = Action::ALL
            .into_iter()
            .filter_map(|a| {
                let c = head.neighbor(a, n)?;
                let d = dist[c.index(n)];
                (d != u32::MAX && !s.is_occupied(c)).then_some((d, a))
            })
            .min_by_key(|&(d, a)| (d, a.index()))?;
        steps += 1;
        if best.0 == 0 {
            return Some(steps);
        }
        s.apply(best.1, &mut AppleSource::Enumerate).ok()?;
        if s.is_terminal() {
            return None;
        }
    }
    None
}

/// Number of 4-connected components among cells not covered by the body.
pub fn complement_components(state: &GameState) -> usize {
    let n = state.n();
    let mut seen = vec![false; n * n];
    let mut count = 0;
    for i in 0..n * n {
        let c = Cell::from_index(i, n);
        if seen[i] || state.is_occupied(c) {
            continue;
        }
        count += 1;
        seen[i] = true;
        let mut stack = vec![c];
        while let Some(c) = stack.pop() {
            for nb in neighbors(c, n) {
                let j = nb.index(n);
                if !seen[j] && !state.is_occupied(nb) {
                    seen[j] = true;
                    stack.push(nb);
                }
            }
        }
    }
    count
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Perimeter,
    ReachApple,
    ReachTail,
    DynamicDistance,
    Components,
    Turns,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Perimeter,
        Metric::ReachApple,
        Metric::ReachTail,
        Metric::DynamicDistance,
        Metric::Components,
        Metric::Turns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Perimeter => "perimeter",
            Metric::ReachApple => "reach_apple",
            Metric::ReachTail => "reach_tail",
            Metric::DynamicDistance => "dynamic_distance",
            Metric::Components => "components",
            Metric::Turns => "turns",
        }
    }

    /// Per-state sample at index `i` of a trajectory; `None` when the
    /// metric is undefined there.
    fn sample(self, t: &Trajectory, i: usize) -> Option<f64> {
        let s = &t.states[i];
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            Metric::Perimeter => Some(flag(s.head().on_border(s.n()))),
            Metric::ReachApple => {
                (!s.is_terminal()).then(|| flag(reachable(s, ReachTarget::Apple)))
            }
            Metric::ReachTail => (!s.is_terminal()).then(|| flag(reachable(s, ReachTarget::Tail))),
            Metric::DynamicDistance => dynamic_distance(s).map(f64::from),
            Metric::Components => (!s.is_terminal()).then(|| complement_components(s) as f64),
            Metric::Turns => {
                let (prev, next) = (t.actions.get(i.checked_sub(1)?)?, t.actions.get(i)?);
                Some(flag(prev != next))
            }
        }
    }
}

pub const SIZE_WINDOW: (usize, usize) = (40, 60);
pub const BUCKET_GAMES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// One past the last game index in the bucket (50, 100, ...).
    pub games: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub count: usize,
}

impl SeriesPoint {
    /// Half-width of the two-standard-error band around the mean.
    pub fn band(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            2.0 * self.std_dev / (self.count as f64).sqrt()
        }
    }
}

/// Pools per-state samples from states with length in `window` across each
/// bucket of `bucket` consecutive games.
pub fn windowed_series(
    games: &[Trajectory],
    metric: Metric,
    window: (usize, usize),
    bucket: usize,
) -> Result<Vec<SeriesPoint>> {
    if bucket == 0 {
        return Err(Error::config("bucket size must be positive"));
    }
    let mut out = Vec::new();
    for (b, chunk) in games.chunks(bucket).enumerate() {
        let mut samples = Vec::new();
        for t in chunk {
            for (i, s) in t.states.iter().enumerate() {
                if (window.0..=window.1).contains(&s.score()) {
                    samples.extend(metric.sample(t, i));
                }
            }
        }
        let count = samples.len();
        let (mean, std_dev) = if count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = samples.iter().sum::<f64>() / count as f64;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
            (mean, var.sqrt())
        };
        out.push(SeriesPoint {
            games: b * bucket + chunk.len(),
            mean,
            std_dev,
            count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(n: usize, body: &[(u8, u8)], apple: Option<(u8, u8)>) -> GameState {
        let cells: Vec<Cell> = body.iter().map(|&(r, c)| Cell::new(r, c)).collect();
        let segs = cells
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let dir = cells
                    .get(i + 1)
                    .and_then(|&prev| Action::between(prev, c))
                    .unwrap_or(Action::Right);
                (c, dir)
            })
            .collect();
        GameState::from_body(n, segs, apple.map(|(r, c)| Cell::new(r, c)), 0).unwrap()
    }

    #[test]
    fn perimeter_counts() {
        let border = state(10, &[(0, 3), (0, 2)], Some((5, 5)));
        let inner = state(10, &[(5, 5), (5, 4)], Some((0, 0)));
        assert_eq!(
            perimeter_fraction(&[border.clone(), border.clone()]).unwrap(),
            1.0
        );
        assert_eq!(
            perimeter_fraction(std::slice::from_ref(&inner)).unwrap(),
            0.0
        );
        let mixed = [border, inner.clone(), inner.clone(), inner];
        assert_eq!(perimeter_fraction(&mixed).unwrap(), 0.25);
        assert!(perimeter_fraction(&[]).is_err());
    }

    #[test]
    fn turns() {
        use Action::*;
        assert_eq!(turn_fraction(&[Right, Right, Right]).unwrap(), 0.0);
        assert_eq!(turn_fraction(&[Right, Down, Right, Down]).unwrap(), 1.0);
        assert_eq!(turn_fraction(&[Right, Right, Down]).unwrap(), 0.5);
        assert!(turn_fraction(&[Right]).is_err());
    }

    #[test]
    fn reachability_cases() {
        let s = state(10, &[(5, 5), (5, 4)], Some((5, 6)));
        assert!(reachable(&s, ReachTarget::Apple));
        assert!(reachable(&s, ReachTarget::Tail));
        // Vertical wall in column 2 from row 0 to row 4 on a 5x5 board,
        // head on the left side, apple on the right.
        let wall = state(
            5,
            &[(0, 1), (0, 2), (1, 2), (2, 2), (3, 2), (4, 2)],
            Some((2, 4)),
        );
        assert!(!reachable(&wall, ReachTarget::Apple));
        // The tail (4,2) borders (4,1), which the head can reach.
        assert!(reachable(&wall, ReachTarget::Tail));
    }

    #[test]
    fn short_body_reaches_everything() {
        for n in 4..=6u8 {
            for r in 0..n {
                for c in 0..n {
                    let head = Cell::new(r, c);
                    for a in Action::ALL {
                        let Some(tail) = head.neighbor(a, n as usize) else {
                            continue;
                        };
                        let apple = (0..n * n)
                            .map(|i| Cell::from_index(i as usize, n as usize))
                            .find(|&x| x != head && x != tail)
                            .unwrap();
                        let s = state(
                            n as usize,
                            &[(head.row, head.col), (tail.row, tail.col)],
                            Some((apple.row, apple.col)),
                        );
                        assert!(reachable(&s, ReachTarget::Apple));
                        assert!(reachable(&s, ReachTarget::Tail));
                    }
                }
            }
        }
    }

    #[test]
    fn dynamic_distance_cases() {
        let adj = state(10, &[(5, 5), (5, 4)], Some((5, 6)));
        assert_eq!(dynamic_distance(&adj), Some(1));
        let corridor = state(10, &[(0, 1), (0, 0)], Some((0, 7)));
        assert_eq!(dynamic_distance(&corridor), Some(6));
        let wall = state(
            5,
            &[(0, 1), (0, 2), (1, 2), (2, 2), (3, 2), (4, 2)],
            Some((2, 4)),
        );
        // No path exists on the first step, which ends the walk.
        assert_eq!(dynamic_distance(&wall), None);
    }

    #[test]
    fn components() {
        let corner = state(10, &[(0, 1), (0, 0)], Some((5, 5)));
        assert_eq!(complement_components(&corner), 1);
        let body: Vec<(u8, u8)> = (0..5).map(|r| (r, 2)).collect();
        let split = state(5, &body, Some((0, 0)));
        assert_eq!(complement_components(&split), 2);
    }

    #[test]
    fn won_board_has_no_complement() {
        // 3x3 serpentine filling the whole board.
        let body = [
            (0, 0),
            (0, 1),
            (0, 2),
            (1, 2),
            (1, 1),
            (1, 0),
            (2, 0),
            (2, 1),
            (2, 2),
        ];
        let s = state(3, &body, None);
        assert!(s.is_terminal());
        assert_eq!(complement_components(&s), 0);
    }

    fn trajectory_of(len: usize, sizes: &[usize]) -> Trajectory {
        // Serpentine bodies of the requested lengths; not a playable game.
        let n = 10;
        let states = sizes
            .iter()
            .map(|&k| {
                let mut cells: Vec<(u8, u8)> = Vec::new();
                for r in 0..n as u8 {
                    let cols: Vec<u8> = if r % 2 == 0 {
                        (0..n as u8).collect()
                    } else {
                        (0..n as u8).rev().collect()
                    };
                    for c in cols {
                        cells.push((r, c));
                    }
                }
                cells.truncate(k);
                cells.reverse();
                state(n, &cells, Some((9, 0)))
            })
            .collect();
        Trajectory {
            states,
            actions: vec![Action::Right; len],
        }
    }

    #[test]
    fn series_windowing() {
        let small = trajectory_of(3, &[2, 3, 4]);
        let big = trajectory_of(3, &[45, 45, 50]);
        let games = vec![small.clone(), big.clone(), small];
        let pts = windowed_series(&games, Metric::Turns, SIZE_WINDOW, 2).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].games, 2);
        assert_eq!(pts[1].games, 3);
        // Turns are defined for states 1 and 2 of the big game.
        assert_eq!(pts[0].count, 2);
        assert_eq!(pts[0].mean, 0.0);
        assert_eq!(pts[0].std_dev, 0.0);
        assert_eq!(pts[1].count, 0);
        assert!(pts[1].mean.is_nan());
        let per = windowed_series(&games, Metric::Perimeter, SIZE_WINDOW, 50).unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(per[0].games, 3);
        assert_eq!(per[0].count, 3);
    }
}
