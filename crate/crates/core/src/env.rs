//! The Snake MDP.
//!
//! A [`GameState`] is an immutable-from-the-outside value: every transition
//! either returns a fresh state ([`GameState::step`], [`GameState::advance`])
//! or mutates an owned value in place ([`GameState::apply`]) for hot loops.
//!
//! Rows grow downward: `Up` decreases the row index. Actions are ordered
//! `Up < Down < Left < Right`, and that order is the tie-break order used
//! everywhere else in the crate.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub const APPLE_REWARD: f64 = 1.0;
pub const LOSS_REWARD: f64 = -10.0;
pub const WIN_REWARD: f64 = 10.0;

/// Episode time limit used for training and evaluation.
pub const DEFAULT_TIME_LIMIT: u32 = 1200;

/// Largest supported board side (cells are stored as `u8` pairs).
pub const MAX_BOARD: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn index(self, n: usize) -> usize {
        self.row as usize * n + self.col as usize
    }

    pub fn from_index(idx: usize, n: usize) -> Self {
        Cell::new((idx / n) as u8, (idx % n) as u8)
    }

    /// Neighbour in direction `a`, or `None` when it leaves the board.
    pub fn neighbor(self, a: Action, n: usize) -> Option<Cell> {
        let (dr, dc) = a.delta();
        let r = self.row as i32 + dr;
        let c = self.col as i32 + dc;
        if r < 0 || c < 0 || r >= n as i32 || c >= n as i32 {
            None
        } else {
            Some(Cell::new(r as u8, c as u8))
        }
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        let dr = (self.row as i32 - other.row as i32).abs();
        let dc = (self.col as i32 - other.col as i32).abs();
        dr + dc == 1
    }

    pub fn on_border(self, n: usize) -> bool {
        let last = (n - 1) as u8;
        self.row == 0 || self.col == 0 || self.row == last || self.col == last
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    /// Direction that moves `from` onto the orthogonally adjacent `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Action> {
        let dr = to.row as i32 - from.row as i32;
        let dc = to.col as i32 - from.col as i32;
        Action::ALL.into_iter().find(|a| a.delta() == (dr, dc))
    }
}

/// Small bitmask set of actions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn first(self) -> Option<Action> {
        self.iter().next()
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    pub fn to_vec(self) -> Vec<Action> {
        self.iter().collect()
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut s = ActionSet::EMPTY;
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Ongoing,
    Won,
    Lost,
    Truncated,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Ongoing
    }
}

/// One body unit: its cell and the direction it last moved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub cell: Cell,
    pub dir: Action,
}

/// A nonzero reward and the step offset (from the start of a transition)
/// at which it was received.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub offset: u32,
    pub reward: f64,
}

pub type Events = SmallVec<[Event; 2]>;

/// Time and rewards consumed along one link of a search tree or one
/// segment of a game.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transit {
    pub elapsed: u32,
    pub events: Events,
}

impl Transit {
    /// `sum(gamma^offset * r) + gamma^elapsed * tail_value`
    pub fn discounted(&self, gamma: f64, tail_value: f64) -> f64 {
        let mut v = gamma.powi(self.elapsed as i32) * tail_value;
        for e in &self.events {
            v += gamma.powi(e.offset as i32) * e.reward;
        }
        v
    }

    /// Appends `other`, shifting its offsets by the time already elapsed here.
    pub fn extend(&mut self, other: &Transit) {
        for e in &other.events {
            self.events.push(Event {
                offset: e.offset + self.elapsed,
                reward: e.reward,
            });
        }
        self.elapsed += other.elapsed;
    }
}

/// Where the next apple comes from when one is eaten.
pub enum AppleSource<'a> {
    /// Uniform over the empty cells, ordered by `(row, col)`.
    Random(&'a mut dyn RngCore),
    /// Pre-determined placements, consumed front to back.
    Scripted(&'a mut VecDeque<Cell>),
    /// No placement available: forced chains stop before eating.
    Enumerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: GameState,
    pub reward: f64,
    pub ate_apple: bool,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvanceOutcome {
    pub next: GameState,
    pub transit: Transit,
    pub terminal: bool,
    /// The chain stopped because the unique forced move eats the apple and
    /// the source was [`AppleSource::Enumerate`].
    pub chance_boundary: bool,
    /// Apple cells placed during the chain, in order.
    pub placed: Vec<Cell>,
}

impl AdvanceOutcome {
    pub fn elapsed(&self) -> u32 {
        self.transit.elapsed
    }

    pub fn events(&self) -> &[Event] {
        &self.transit.events
    }
}

/// Result of an in-place [`GameState::apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub reward: f64,
    pub ate_apple: bool,
    pub placed: Option<Cell>,
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct GameState {
    n: u8,
    body: VecDeque<Segment>,
    occupied: Vec<u64>,
    apple: Option<Cell>,
    time_index: u32,
    time_limit: Option<u32>,
    status: Status,
}

/// Serialized form; occupancy is rebuilt and invariants re-checked on load.
#[derive(Clone, Serialize, Deserialize)]
struct StateRepr {
    n: u8,
    body: Vec<Segment>,
    apple: Option<Cell>,
    time_index: u32,
    time_limit: Option<u32>,
    status: Status,
}

impl From<GameState> for StateRepr {
    fn from(s: GameState) -> Self {
        StateRepr {
            n: s.n,
            body: s.body.into_iter().collect(),
            apple: s.apple,
            time_index: s.time_index,
            time_limit: s.time_limit,
            status: s.status,
        }
    }
}

impl TryFrom<StateRepr> for GameState {
    type Error = Error;

    fn try_from(r: StateRepr) -> Result<Self> {
        let mut s = GameState::raw(r.n as usize, r.body, r.apple)?;
        s.time_index = r.time_index;
        s.time_limit = r.time_limit;
        s.status = r.status;
        s.check_invariants()?;
        Ok(s)
    }
}

impl fmt::Debug for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "GameState(n={}, t={}, len={}, status={:?})",
            self.n,
            self.time_index,
            self.body.len(),
            self.status
        )?;
        let n = self.n();
        for r in 0..n {
            for c in 0..n {
                let cell = Cell::new(r as u8, c as u8);
                let ch = if Some(cell) == self.apple {
                    'A'
                } else if cell == self.head() {
                    'H'
                } else if self.is_occupied(cell) {
                    'o'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn words_for(n: usize) -> usize {
    (n * n).div_ceil(64)
}

impl GameState {
    /// Canonical start: tail (0,0), head (0,1), both facing right, apple
    /// uniform over the remaining cells. No time limit.
    pub fn new_game(n: usize, rng: &mut dyn RngCore) -> Result<GameState> {
        if n < 3 {
            return Err(Error::config(format!("board side must be >= 3, got {n}")));
        }
        if n > MAX_BOARD {
            return Err(Error::config(format!(
                "board side must be <= {MAX_BOARD}, got {n}"
            )));
        }
        let mut s = GameState::start_body(n)?;
        let empties = s.empty_cells();
        let pick = rng.random_range(0..empties.len());
        s.apple = Some(empties[pick]);
        Ok(s)
    }

    fn start_body(n: usize) -> Result<GameState> {
        let body = vec![
            Segment {
                cell: Cell::new(0, 1),
                dir: Action::Right,
            },
            Segment {
                cell: Cell::new(0, 0),
                dir: Action::Right,
            },
        ];
        GameState::raw(n, body, None)
    }

    /// Start state with an explicit apple cell.
    pub fn new_game_with_apple(n: usize, apple: Cell) -> Result<GameState> {
        if n < 3 {
            return Err(Error::config(format!("board side must be >= 3, got {n}")));
        }
        let mut s = GameState::start_body(n)?;
        if apple.row as usize >= n || apple.col as usize >= n || s.is_occupied(apple) {
            return Err(Error::InvalidChanceOutcome(format!(
                "apple {apple} is not an empty cell"
            )));
        }
        s.apple = Some(apple);
        Ok(s)
    }

    /// Builds an arbitrary position (head first). Status is derived:
    /// `Won` when the board is full, `Lost` when no move exists, otherwise
    /// `Ongoing`.
    pub fn from_body(
        n: usize,
        body: Vec<(Cell, Action)>,
        apple: Option<Cell>,
        time_index: u32,
    ) -> Result<GameState> {
        let segs = body
            .into_iter()
            .map(|(cell, dir)| Segment { cell, dir })
            .collect();
        let mut s = GameState::raw(n, segs, apple)?;
        s.time_index = time_index;
        s.status = if s.body.len() == n * n {
            Status::Won
        } else if s.legal_mask().is_empty() {
            Status::Lost
        } else {
            Status::Ongoing
        };
        s.check_invariants()?;
        Ok(s)
    }

    fn raw(n: usize, body: Vec<Segment>, apple: Option<Cell>) -> Result<GameState> {
        if !(2..=MAX_BOARD).contains(&n) {
            return Err(Error::config(format!("unsupported board side {n}")));
        }
        let mut occupied = vec![0u64; words_for(n)];
        for seg in &body {
            if seg.cell.row as usize >= n || seg.cell.col as usize >= n {
                return Err(Error::config(format!("cell {} out of bounds", seg.cell)));
            }
            let i = seg.cell.index(n);
            if occupied[i / 64] & (1 << (i % 64)) != 0 {
                return Err(Error::config(format!("duplicate body cell {}", seg.cell)));
            }
            occupied[i / 64] |= 1 << (i % 64);
        }
        Ok(GameState {
            n: n as u8,
            body: body.into(),
            occupied,
            apple,
            time_index: 0,
            time_limit: None,
            status: Status::Ongoing,
        })
    }

    pub fn with_time_limit(mut self, limit: Option<u32>) -> Self {
        self.time_limit = limit;
        if self.status == Status::Ongoing {
            if let Some(l) = limit {
                if self.time_index >= l {
                    self.status = Status::Truncated;
                }
            }
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn body(&self) -> &VecDeque<Segment> {
        &self.body
    }

    pub fn head(&self) -> Cell {
        self.body[0].cell
    }

    pub fn tail(&self) -> Cell {
        self.body[self.body.len() - 1].cell
    }

    pub fn apple(&self) -> Option<Cell> {
        self.apple
    }

    pub fn time_index(&self) -> u32 {
        self.time_index
    }

    pub fn time_limit(&self) -> Option<u32> {
        self.time_limit
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_terminal(&self) -> bool {
        self.status.is_terminal()
    }

    /// Body length; starts at 2, maximum n².
    pub fn score(&self) -> usize {
        self.body.len()
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        let i = c.index(self.n());
        self.occupied[i / 64] & (1 << (i % 64)) != 0
    }

    fn set_occupied(&mut self, c: Cell, on: bool) {
        let i = c.index(self.n());
        if on {
            self.occupied[i / 64] |= 1 << (i % 64);
        } else {
            self.occupied[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Empty cells in `(row, col)` order.
    pub fn empty_cells(&self) -> Vec<Cell> {
        let n = self.n();
        (0..n * n)
            .filter(|&i| self.occupied[i / 64] & (1 << (i % 64)) == 0)
            .map(|i| Cell::from_index(i, n))
            .collect()
    }

    /// Legality without the status check. The tail cell is enterable: it is
    /// never the apple, so moving there never grows the snake.
    pub fn legal_mask(&self) -> ActionSet {
        let n = self.n();
        let head = self.head();
        let tail = self.tail();
        let mut set = ActionSet::EMPTY;
        for a in Action::ALL {
            if let Some(t) = head.neighbor(a, n) {
                if !self.is_occupied(t) || t == tail {
                    set.insert(a);
                }
            }
        }
        set
    }

    pub fn legal_actions(&self) -> Result<ActionSet> {
        if self.is_terminal() {
            return Err(Error::contract(format!(
                "legal_actions on terminal state ({:?})",
                self.status
            )));
        }
        Ok(self.legal_mask())
    }

    pub fn eats(&self, a: Action) -> bool {
        match (self.apple, self.head().neighbor(a, self.n())) {
            (Some(apple), Some(t)) => apple == t,
            _ => false,
        }
    }

    /// Eating with `a` would fill the board (no new apple needed).
    fn eat_wins(&self) -> bool {
        self.body.len() + 1 == self.n() * self.n()
    }

    /// In-place transition. On error the state is left untouched.
    pub fn apply(&mut self, action: Action, source: &mut AppleSource<'_>) -> Result<StepReport> {
        if self.is_terminal() {
            return Err(Error::contract(format!(
                "step on terminal state ({:?})",
                self.status
            )));
        }
        let n = self.n();
        let target = match self.head().neighbor(action, n) {
            Some(t) if !self.is_occupied(t) || t == self.tail() => t,
            _ => {
                return Err(Error::contract(format!(
                    "illegal action {action:?} from head {}",
                    self.head()
                )))
            }
        };
        let eats = self.apple == Some(target);

        // Resolve the next apple before mutating anything.
        let mut placed = None;
        if eats && !self.eat_wins() {
            let cell =
                match source {
                    AppleSource::Enumerate => return Err(Error::contract(
                        "eating move needs an apple placement; enumerate chance outcomes instead",
                    )),
                    AppleSource::Scripted(q) => {
                        let c = q.front().copied().ok_or_else(|| {
                            Error::InvalidChanceOutcome("scripted apple queue exhausted".into())
                        })?;
                        if c.row as usize >= n
                            || c.col as usize >= n
                            || c == target
                            || self.is_occupied(c)
                        {
                            return Err(Error::InvalidChanceOutcome(format!(
                                "apple cell {c} is not empty after the move"
                            )));
                        }
                        q.pop_front();
                        c
                    }
                    AppleSource::Random(rng) => {
                        let len = n * n - self.body.len() - 1;
                        let k = rng.random_range(0..len);
                        self.kth_empty_excluding(k, target)
                    }
                };
            placed = Some(cell);
        }

        let mut reward = 0.0;
        if eats {
            reward += APPLE_REWARD;
        } else {
            let old_tail = self.body.pop_back().expect("body has >= 2 segments");
            self.set_occupied(old_tail.cell, false);
        }
        self.body.push_front(Segment {
            cell: target,
            dir: action,
        });
        self.set_occupied(target, true);
        self.time_index += 1;

        if eats {
            if self.body.len() == n * n {
                self.apple = None;
                self.status = Status::Won;
                reward += WIN_REWARD;
            } else {
                self.apple = placed;
            }
        }
        if self.status == Status::Ongoing && self.legal_mask().is_empty() {
            self.status = Status::Lost;
            reward += LOSS_REWARD;
        }
        if self.status == Status::Ongoing {
            if let Some(limit) = self.time_limit {
                if self.time_index >= limit {
                    self.status = Status::Truncated;
                }
            }
        }
        Ok(StepReport {
            reward,
            ate_apple: eats,
            placed,
        })
    }

    /// k-th empty cell in `(row, col)` order, treating `extra` as occupied.
    fn kth_empty_excluding(&self, mut k: usize, extra: Cell) -> Cell {
        let n = self.n();
        let skip = extra.index(n);
        for i in 0..n * n {
            if i == skip || self.occupied[i / 64] & (1 << (i % 64)) != 0 {
                continue;
            }
            if k == 0 {
                return Cell::from_index(i, n);
            }
            k -= 1;
        }
        unreachable!("fewer empty cells than expected")
    }

    pub fn step(&self, action: Action, source: &mut AppleSource<'_>) -> Result<StepOutcome> {
        let mut next = self.clone();
        let rep = next.apply(action, source)?;
        let terminal = next.is_terminal();
        Ok(StepOutcome {
            next,
            reward: rep.reward,
            ate_apple: rep.ate_apple,
            terminal,
        })
    }

    /// Cells where the next apple may appear after eating with `action`,
    /// in `(row, col)` order.
    pub fn chance_cells(&self, action: Action) -> Result<Vec<Cell>> {
        if !self.legal_actions()?.contains(action) || !self.eats(action) {
            return Err(Error::contract(format!(
                "{action:?} does not eat the apple"
            )));
        }
        let target = self.head().neighbor(action, self.n()).expect("legal");
        let mut cells = self.empty_cells();
        cells.retain(|&c| c != target);
        Ok(cells)
    }

    /// One equally likely outcome per empty cell after growth.
    pub fn enumerate_chance_outcomes(&self, action: Action) -> Result<Vec<(Cell, StepOutcome)>> {
        self.chance_cells(action)?
            .into_iter()
            .map(|c| {
                let mut q = VecDeque::from([c]);
                self.step(action, &mut AppleSource::Scripted(&mut q))
                    .map(|o| (c, o))
            })
            .collect()
    }

    /// Applies `action`, then every forced (single-legal-move) step after it.
    pub fn advance(&self, action: Action, source: &mut AppleSource<'_>) -> Result<AdvanceOutcome> {
        let mut next = self.clone();
        let mut transit = Transit::default();
        let mut placed = Vec::new();
        let first = next.apply(action, source)?;
        record(&mut transit, &mut placed, first);
        let chance_boundary = next.run_forced(&mut transit, &mut placed, source)?;
        let terminal = next.is_terminal();
        Ok(AdvanceOutcome {
            next,
            transit,
            terminal,
            chance_boundary,
            placed,
        })
    }

    /// Eats with `action` placing the apple at `cell`, then follows the
    /// forced chain in enumerate mode.
    pub fn resolve_chance(&self, action: Action, cell: Cell) -> Result<AdvanceOutcome> {
        let mut q = VecDeque::from([cell]);
        if !self.eats(action) {
            return Err(Error::contract(format!(
                "{action:?} does not eat the apple"
            )));
        }
        let mut next = self.clone();
        let mut transit = Transit::default();
        let mut placed = Vec::new();
        let first = next.apply(action, &mut AppleSource::Scripted(&mut q))?;
        record(&mut transit, &mut placed, first);
        let chance_boundary =
            next.run_forced(&mut transit, &mut placed, &mut AppleSource::Enumerate)?;
        let terminal = next.is_terminal();
        Ok(AdvanceOutcome {
            next,
            transit,
            terminal,
            chance_boundary,
            placed,
        })
    }

    /// Follows forced moves. Returns true when stopped at a chance boundary.
    fn run_forced(
        &mut self,
        transit: &mut Transit,
        placed: &mut Vec<Cell>,
        source: &mut AppleSource<'_>,
    ) -> Result<bool> {
        while !self.is_terminal() {
            let legal = self.legal_mask();
            if legal.len() != 1 {
                break;
            }
            let a = legal.first().expect("one legal action");
            if matches!(source, AppleSource::Enumerate) && self.eats(a) && !self.eat_wins() {
                return Ok(true);
            }
            let rep = self.apply(a, source)?;
            record(transit, placed, rep);
        }
        Ok(false)
    }

    /// Full invariant check, used by tests and on deserialization.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n();
        let fail = |m: String| Err(Error::contract(format!("invariant violated: {m}")));
        if self.body.len() < 2 || self.body.len() > n * n {
            return fail(format!("body length {}", self.body.len()));
        }
        let mut occ = vec![0u64; words_for(n)];
        for seg in &self.body {
            let i = seg.cell.index(n);
            if seg.cell.row as usize >= n || seg.cell.col as usize >= n {
                return fail(format!("cell {} out of bounds", seg.cell));
            }
            if occ[i / 64] & (1 << (i % 64)) != 0 {
                return fail(format!("duplicate cell {}", seg.cell));
            }
            occ[i / 64] |= 1 << (i % 64);
        }
        if occ != self.occupied {
            return fail("occupancy out of sync".into());
        }
        for w in self.body.iter().collect::<Vec<_>>().windows(2) {
            if !w[0].cell.is_adjacent(w[1].cell) {
                return fail(format!("{} and {} not adjacent", w[0].cell, w[1].cell));
            }
        }
        match self.apple {
            Some(a) => {
                if self.body.len() == n * n {
                    return fail("apple present on a full board".into());
                }
                if a.row as usize >= n || a.col as usize >= n || self.is_occupied(a) {
                    return fail(format!("apple {a} on body or out of bounds"));
                }
            }
            None => {
                if self.body.len() != n * n {
                    return fail("apple absent on a non-full board".into());
                }
            }
        }
        if (self.status == Status::Won) != (self.body.len() == n * n) {
            return fail(format!(
                "status {:?} with length {}",
                self.status,
                self.body.len()
            ));
        }
        if self.status == Status::Lost && !self.legal_mask().is_empty() {
            return fail("lost with legal moves available".into());
        }
        if self.status == Status::Ongoing && self.legal_mask().is_empty() {
            return fail("ongoing with no legal moves".into());
        }
        Ok(())
    }
}

fn record(transit: &mut Transit, placed: &mut Vec<Cell>, rep: StepReport) {
    if rep.reward != 0.0 {
        transit.events.push(Event {
            offset: transit.elapsed,
            reward: rep.reward,
        });
    }
    if let Some(c) = rep.placed {
        placed.push(c);
    }
    transit.elapsed += 1;
}

/// Seven binary `n x n` planes, bit-packed: four direction planes
/// (`Up, Down, Left, Right`), then head, tail and apple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeaturePlanes {
    n: u8,
    bits: Vec<u64>,
}

pub const NUM_PLANES: usize = 7;
pub const PLANE_HEAD: usize = 4;
pub const PLANE_TAIL: usize = 5;
pub const PLANE_APPLE: usize = 6;

impl FeaturePlanes {
    pub fn zeros(n: usize) -> Self {
        FeaturePlanes {
            n: n as u8,
            bits: vec![0; (NUM_PLANES * n * n).div_ceil(64)],
        }
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    /// Packed bits, 64 per word, flat index `plane * n² + row * n + col`.
    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn from_words(n: usize, words: Vec<u64>) -> Result<Self> {
        let bits = NUM_PLANES * n * n;
        if n > MAX_BOARD || words.len() != bits.div_ceil(64) {
            return Err(Error::config(format!(
                "{} words do not describe {n}x{n} planes",
                words.len()
            )));
        }
        if !bits.is_multiple_of(64) && words[words.len() - 1] >> (bits % 64) != 0 {
            return Err(Error::config("bits set beyond the last plane"));
        }
        Ok(FeaturePlanes {
            n: n as u8,
            bits: words,
        })
    }

    fn bit(&self, plane: usize, cell: Cell) -> usize {
        let n = self.n();
        plane * n * n + cell.index(n)
    }

    pub fn set(&mut self, plane: usize, cell: Cell) {
        let i = self.bit(plane, cell);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, plane: usize, cell: Cell) -> bool {
        let i = self.bit(plane, cell);
        self.bits[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn plane_count(&self, plane: usize) -> usize {
        let n = self.n();
        (0..n * n)
            .filter(|&i| self.get(plane, Cell::from_index(i, n)))
            .count()
    }

    /// Set entries as flat indices `plane * n² + row * n + col`, ascending.
    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut x = word;
            std::iter::from_fn(move || {
                if x == 0 {
                    None
                } else {
                    let b = x.trailing_zeros() as usize;
                    x &= x - 1;
                    Some(w * 64 + b)
                }
            })
        })
    }

    /// Dense `7 x n x n` copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; NUM_PLANES * n * n];
        for i in self.set_indices() {
            out[i] = 1.0;
        }
        out
    }
}

/// Encodes `state` for a network configured for `board_n`.
pub fn encode_features(state: &GameState, board_n: usize) -> Result<FeaturePlanes> {
    if state.n() != board_n {
        return Err(Error::config(format!(
            "state board {} does not match network board {board_n}",
            state.n()
        )));
    }
    let mut f = FeaturePlanes::zeros(board_n);
    for seg in state.body() {
        f.set(seg.dir.index(), seg.cell);
    }
    f.set(PLANE_HEAD, state.head());
    f.set(PLANE_TAIL, state.tail());
    if let Some(a) = state.apple() {
        f.set(PLANE_APPLE, a);
    }
    Ok(f)
}
