//! Comparison strategies: uniform random play, Hamiltonian-cycle following,
//! and tree search without a network.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};

use crate::env::{Action, AppleSource, Cell, GameState, Status};
use crate::error::{Error, Result};
use crate::mcts::{SearchConfig, SearchTree, SnakeModel, UniformEvaluator};

/// A closed tour of the board visiting every cell once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HamiltonianCycle {
    n: usize,
    order: Vec<Cell>,
    position: Vec<usize>,
}

impl HamiltonianCycle {
    /// Serpentine cycle: row 0 rightwards from (0,0), then rows 1..n over
    /// columns 1..n alternating direction, finishing at (n-1,1), and back up
    /// column 0 to the start.
    pub fn build(n: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::NoCycle(format!(
                "serpentine construction needs an even side >= 4, got {n}"
            )));
        }
        let mut order = Vec::with_capacity(n * n);
        order.push(Cell::new(0, 0));
        for r in 0..n {
            let cols: Box<dyn Iterator<Item = usize>> = if r % 2 == 0 {
                Box::new(1..n)
            } else {
                Box::new((1..n).rev())
            };
            for c in cols {
                order.push(Cell::new(r as u8, c as u8));
            }
        }
        for r in (1..n).rev() {
            order.push(Cell::new(r as u8, 0));
        }
        Self::from_order(n, order)
    }

    /// Validates an arbitrary ordering.
    pub fn from_order(n: usize, order: Vec<Cell>) -> Result<Self> {
        if order.len() != n * n {
            return Err(Error::NoCycle(format!(
                "{} cells listed for a {n}x{n} board",
                order.len()
            )));
        }
        let mut position = vec![usize::MAX; n * n];
        for (i, c) in order.iter().enumerate() {
            if c.row as usize >= n || c.col as usize >= n {
                return Err(Error::NoCycle(format!("{c} is off the board")));
            }
            let slot = &mut position[c.index(n)];
            if *slot != usize::MAX {
                return Err(Error::NoCycle(format!("{c} visited twice")));
            }
            *slot = i;
        }
        for i in 0..order.len() {
            let (a, b) = (order[i], order[(i + 1) % order.len()]);
            if !a.is_adjacent(b) {
                return Err(Error::NoCycle(format!("{a} -> {b} is not a single step")));
            }
        }
        Ok(HamiltonianCycle { n, order, position })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[Cell] {
        &self.order
    }

    pub fn position(&self, c: Cell) -> usize {
        self.position[c.index(self.n)]
    }

    /// Cell at `pos` modulo the cycle length.
    pub fn cell_at(&self, pos: usize) -> Cell {
        self.order[pos % self.order.len()]
    }

    pub fn successor(&self, c: Cell) -> Cell {
        self.cell_at(self.position(c) + 1)
    }

    /// Position `steps` places before `pos`.
    fn back(&self, pos: usize, steps: usize) -> usize {
        let len = self.order.len();
        (pos + len - steps % len) % len
    }

    /// Whether the body occupies consecutive cycle cells ending at the head.
    /// Checks the neck and tail only; the rest follows inductively.
    pub fn holds_arc(&self, state: &GameState) -> bool {
        let body = state.body();
        let h = self.position(state.head());
        let neck = body[1].cell;
        self.position(neck) == self.back(h, 1)
            && self.position(state.tail()) == self.back(h, body.len() - 1)
    }
}

/// Anything that picks a move in a non-terminal state.
pub trait Agent {
    fn name(&self) -> &str;
    fn act(&mut self, state: &GameState, rng: &mut dyn RngCore) -> Result<Action>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "Random policy"
    }

    fn act(&mut self, state: &GameState, rng: &mut dyn RngCore) -> Result<Action> {
        let legal = state.legal_actions()?;
        if legal.is_empty() {
            return Err(Error::contract("no legal action"));
        }
        let k = rng.random_range(0..legal.len());
        Ok(legal.iter().nth(k).expect("index below len"))
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianAgent {
    cycle: HamiltonianCycle,
}

impl HamiltonianAgent {
    pub fn new(n: usize) -> Result<Self> {
        Ok(HamiltonianAgent {
            cycle: HamiltonianCycle::build(n)?,
        })
    }

    pub fn cycle(&self) -> &HamiltonianCycle {
        &self.cycle
    }
}

impl Agent for HamiltonianAgent {
    fn name(&self) -> &str {
        "Hamiltonian cycle strategy"
    }

    fn act(&mut self, state: &GameState, _rng: &mut dyn RngCore) -> Result<Action> {
        if state.n() != self.cycle.n {
            return Err(Error::config("board size differs from the cycle"));
        }
        if !self.cycle.holds_arc(state) {
            return Err(Error::contract("snake body is not on an arc of the cycle"));
        }
        let head = state.head();
        Action::between(head, self.cycle.successor(head))
            .ok_or_else(|| Error::contract("cycle successor not adjacent"))
    }
}

/// Search guided only by environment rewards: uniform priors, leaf value 0,
/// most-visited root action.
#[derive(Clone, Debug)]
pub struct NaiveSearchAgent {
    cfg: SearchConfig,
}

pub const NAIVE_BUDGET: u32 = 10_000;

impl NaiveSearchAgent {
    pub fn new(cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NaiveSearchAgent { cfg })
    }
}

impl Agent for NaiveSearchAgent {
    fn name(&self) -> &str {
        "Naive tree search"
    }

    /// With no reward inside the search horizon every value is zero, so
    /// ties are broken at random both inside the tree and among the most
    /// visited root actions. A fixed order would make the snake shuttle
    /// back and forth.
    fn act(&mut self, state: &GameState, rng: &mut dyn RngCore) -> Result<Action> {
        let legal = state.legal_actions()?;
        if let (1, Some(a)) = (legal.len(), legal.first()) {
            return Ok(a);
        }
        let mut tree =
            SearchTree::new(&SnakeModel, state.clone(), self.cfg, &mut UniformEvaluator)?
                .with_random_ties(rng.next_u64());
        tree.run(&SnakeModel, &mut UniformEvaluator)?;
        let res = tree.result();
        let top = legal
            .iter()
            .map(|a| res.visits[a.index()])
            .max()
            .unwrap_or(0);
        let best: Vec<Action> = legal
            .iter()
            .filter(|a| res.visits[a.index()] == top)
            .collect();
        Ok(best[rng.random_range(0..best.len())])
    }
}

/// Plays the Hamiltonian strategy with every new apple placed on the empty
/// cell farthest ahead along the cycle, and returns the win time.
pub fn adversarial_win_time(n: usize) -> Result<u32> {
    let cycle = HamiltonianCycle::build(n)?;
    let total = cycle.len();
    // Start: tail at position 0, head at 1; the farthest empty cell is the
    // one just behind the tail.
    let mut state =
        GameState::new_game_with_apple(n, cycle.cell_at(total - 1))?.with_time_limit(None);
    let mut agent = HamiltonianAgent { cycle };
    let mut queue = VecDeque::new();
    // The Hamiltonian agent draws no randomness.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    while state.status() == Status::Ongoing {
        let a = agent.act(&state, &mut rng)?;
        if state.eats(a) && state.score() + 1 < total {
            let tail_pos = agent.cycle.position(state.tail());
            queue.push_back(agent.cycle.cell_at(agent.cycle.back(tail_pos, 1)));
        }
        state.apply(a, &mut AppleSource::Scripted(&mut queue))?;
    }
    if state.status() != Status::Won {
        return Err(Error::contract(format!(
            "adversarial game ended {:?}",
            state.status()
        )));
    }
    Ok(state.time_index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cycles_for_even_sides() {
        for n in (4..=20).step_by(2) {
            let c = HamiltonianCycle::build(n).unwrap();
            assert_eq!(c.len(), n * n);
            assert_eq!(c.cell_at(0), Cell::new(0, 0));
            assert_eq!(c.cell_at(1), Cell::new(0, 1));
        }
        assert!(matches!(HamiltonianCycle::build(5), Err(Error::NoCycle(_))));
        assert!(matches!(HamiltonianCycle::build(3), Err(Error::NoCycle(_))));
    }

    #[test]
    fn four_by_four_order() {
        let c = HamiltonianCycle::build(4).unwrap();
        let cells: Vec<(u8, u8)> = c.order().iter().map(|c| (c.row, c.col)).collect();
        assert_eq!(
            cells,
            vec![
                (0, 0),
                (0, 1),
                (0, 2),
                (0, 3),
                (1, 3),
                (1, 2),
                (1, 1),
                (2, 1),
                (2, 2),
                (2, 3),
                (3, 3),
                (3, 2),
                (3, 1),
                (3, 0),
                (2, 0),
                (1, 0),
            ]
        );
    }

    #[test]
    fn broken_orders_rejected() {
        let c = HamiltonianCycle::build(4).unwrap();
        let mut order = c.order().to_vec();
        order.swap(2, 3);
        assert!(HamiltonianCycle::from_order(4, order).is_err());
        let mut order = c.order().to_vec();
        order[5] = order[4];
        assert!(HamiltonianCycle::from_order(4, order).is_err());
    }

    #[test]
    fn hamiltonian_start_move_is_right() {
        let mut agent = HamiltonianAgent::new(10).unwrap();
        let s = GameState::new_game_with_apple(10, Cell::new(5, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(agent.act(&s, &mut rng).unwrap(), Action::Right);
    }

    #[test]
    fn hamiltonian_rejects_off_cycle_body() {
        let mut agent = HamiltonianAgent::new(4).unwrap();
        // Head (1,1) with neck (0,1): the cycle goes (0,1) -> (0,2).
        let s = GameState::from_body(
            4,
            vec![
                (Cell::new(1, 1), Action::Down),
                (Cell::new(0, 1), Action::Right),
            ],
            Some(Cell::new(3, 3)),
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(agent.act(&s, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn hamiltonian_wins_small_boards() {
        for n in [4, 6] {
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut s = GameState::new_game(n, &mut rng)
                    .unwrap()
                    .with_time_limit(None);
                let mut agent = HamiltonianAgent::new(n).unwrap();
                while !s.is_terminal() {
                    let a = agent.act(&s, &mut rng).unwrap();
                    assert!(s.legal_mask().contains(a));
                    s.apply(a, &mut AppleSource::Random(&mut rng)).unwrap();
                }
                assert_eq!(s.status(), Status::Won);
                let worst = ((n * n - 2) * (n * n - 1) / 2) as u32;
                assert!(s.time_index() <= worst);
            }
        }
    }

    #[test]
    fn adversarial_placement_hits_worst_case() {
        assert_eq!(adversarial_win_time(4).unwrap(), 14 * 15 / 2);
        assert_eq!(adversarial_win_time(10).unwrap(), 4851);
    }

    #[test]
    fn random_agent_single_legal_action() {
        let s = GameState::from_body(
            10,
            vec![
                (Cell::new(0, 0), Action::Left),
                (Cell::new(0, 1), Action::Left),
                (Cell::new(0, 2), Action::Left),
            ],
            Some(Cell::new(5, 5)),
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(RandomAgent.act(&s, &mut rng).unwrap(), Action::Down);
        }
    }

    #[test]
    fn naive_search_avoids_immediate_loss() {
        // Moving Left into the corner (0,0) leaves the head boxed in by the
        // neck and (1,0); Right is open.
        let s = GameState::from_body(
            5,
            vec![
                (Cell::new(0, 1), Action::Up),
                (Cell::new(1, 1), Action::Right),
                (Cell::new(1, 0), Action::Up),
                (Cell::new(2, 0), Action::Up),
                (Cell::new(3, 0), Action::Up),
            ],
            Some(Cell::new(4, 4)),
            0,
        )
        .unwrap();
        assert_eq!(
            s.legal_actions().unwrap().to_vec(),
            vec![Action::Left, Action::Right]
        );
        let lost = s
            .advance(Action::Left, &mut AppleSource::Enumerate)
            .unwrap();
        assert_eq!(lost.next.status(), Status::Lost);
        for budget in [100, 400, 1000] {
            let cfg = SearchConfig {
                budget,
                ..SearchConfig::default()
            };
            let mut agent = NaiveSearchAgent::new(cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            assert_eq!(agent.act(&s, &mut rng).unwrap(), Action::Right);
        }
    }

    #[test]
    fn naive_search_breaks_ties_randomly() {
        // Nothing is reachable within a tiny budget, so every move scores zero.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = GameState::new_game(10, &mut rng).unwrap();
        let cfg = SearchConfig {
            budget: 4,
            ..SearchConfig::default()
        };
        let mut agent = NaiveSearchAgent::new(cfg).unwrap();
        let picks: std::collections::HashSet<Action> = (0..40)
            .map(|seed| agent.act(&s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
            .collect();
        assert!(picks.len() > 1);
    }
}
