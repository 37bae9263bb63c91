//! PUCT tree search over decision nodes and uniform chance nodes.
//!
//! Values are discounted by the time each link consumes, so a forced chain
//! of `k` steps between two decision points costs `gamma^k`. Chance nodes
//! visit their outcomes round-robin (least visited first), which makes the
//! plain average of backed-up values an estimate of the uniform expectation.
//!
//! The search is generic over [`SearchModel`]; [`SnakeModel`] is the game
//! itself, and tests plug in hand-built trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::env::{Action, ActionSet, AppleSource, Cell, GameState, Transit};
use crate::error::{Error, Result};

/// Where one link of the tree leads.
#[derive(Clone, Debug)]
pub enum Target<S, O> {
    Decision(S),
    Terminal,
    /// `action` taken from `state` has a random outcome, one of `outcomes`
    /// with equal probability.
    Chance {
        state: S,
        action: Action,
        outcomes: Vec<O>,
    },
}

#[derive(Clone, Debug)]
pub struct Link<S, O> {
    pub transit: Transit,
    pub target: Target<S, O>,
}

pub trait SearchModel {
    type State: Clone;
    type Outcome: Clone;

    fn legal_actions(&self, state: &Self::State) -> ActionSet;

    fn expand(
        &self,
        state: &Self::State,
        action: Action,
    ) -> Result<Link<Self::State, Self::Outcome>>;

    fn resolve(
        &self,
        state: &Self::State,
        action: Action,
        outcome: &Self::Outcome,
    ) -> Result<Link<Self::State, Self::Outcome>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub policy: [f64; 4],
    pub value: f64,
}

pub trait Evaluator<S> {
    fn evaluate(&mut self, state: &S) -> Result<Evaluation>;
}

/// Uniform policy, zero value: search driven by environment rewards only.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformEvaluator;

impl<S> Evaluator<S> for UniformEvaluator {
    fn evaluate(&mut self, _state: &S) -> Result<Evaluation> {
        Ok(Evaluation {
            policy: [0.25; 4],
            value: 0.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletNoise {
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub c_puct: f64,
    pub tau: f64,
    /// Leaf evaluations per search.
    pub budget: u32,
    pub gamma: f64,
    /// Root exploration noise; off unless set.
    pub dirichlet: Option<DirichletNoise>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            c_puct: 0.5,
            tau: 0.5,
            budget: 200,
            gamma: 0.98,
            dirichlet: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::config("search budget must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau {} must be > 0", self.tau)));
        }
        if !(self.c_puct >= 0.0 && self.c_puct.is_finite()) {
            return Err(Error::config(format!(
                "c_puct {} must be >= 0",
                self.c_puct
            )));
        }
        if let Some(d) = self.dirichlet {
            if !(d.alpha > 0.0 && d.alpha.is_finite() && (0.0..=1.0).contains(&d.epsilon)) {
                return Err(Error::config(format!(
                    "dirichlet alpha {} must be > 0 and epsilon {} in [0, 1]",
                    d.alpha, d.epsilon
                )));
            }
        }
        Ok(())
    }
}

/// Visit count, accumulated value, mean value and prior of one action.
/// The mean of an unvisited edge is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeStats {
    pub visits: u32,
    pub total: f64,
    pub mean: f64,
    pub prior: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Child {
    Unvisited,
    Decision(usize),
    Chance(usize),
    Terminal,
}

#[derive(Clone, Debug)]
struct Edge {
    action: Action,
    stats: EdgeStats,
    child: Child,
    transit: Transit,
}

#[derive(Clone, Debug)]
pub struct DecisionNode<S> {
    state: S,
    edges: SmallVec<[Edge; 4]>,
    expanded: bool,
}

impl<S> DecisionNode<S> {
    fn new(state: S, legal: ActionSet) -> Self {
        DecisionNode {
            state,
            edges: legal
                .iter()
                .map(|action| Edge {
                    action,
                    stats: EdgeStats::default(),
                    child: Child::Unvisited,
                    transit: Transit::default(),
                })
                .collect(),
            expanded: false,
        }
    }

    /// A node with preset statistics, marked expanded.
    pub fn with_stats(state: S, stats: &[(Action, EdgeStats)]) -> Self {
        DecisionNode {
            state,
            edges: stats
                .iter()
                .map(|&(action, stats)| Edge {
                    action,
                    stats,
                    child: Child::Unvisited,
                    transit: Transit::default(),
                })
                .collect(),
            expanded: true,
        }
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn is_expanded(&self) -> bool {
        self.expanded
    }

    pub fn stats(&self) -> impl Iterator<Item = (Action, EdgeStats)> + '_ {
        self.edges.iter().map(|e| (e.action, e.stats))
    }
}

#[derive(Clone, Debug)]
struct OutcomeSlot<O> {
    outcome: O,
    visits: u32,
    child: Child,
    transit: Transit,
}

#[derive(Clone, Debug)]
pub struct ChanceNode<S, O> {
    state: S,
    action: Action,
    slots: Vec<OutcomeSlot<O>>,
}

impl<S, O> ChanceNode<S, O> {
    pub fn new(state: S, action: Action, outcomes: Vec<O>) -> Self {
        ChanceNode {
            state,
            action,
            slots: outcomes
                .into_iter()
                .map(|outcome| OutcomeSlot {
                    outcome,
                    visits: 0,
                    child: Child::Unvisited,
                    transit: Transit::default(),
                })
                .collect(),
        }
    }

    pub fn visit_counts(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.visits).collect()
    }

    pub fn outcome(&self, i: usize) -> &O {
        &self.slots[i].outcome
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// PUCT value of every edge: `Q + c * P * sqrt(sum N) / (1 + N)`.
pub fn puct_scores<S>(node: &DecisionNode<S>, c_puct: f64) -> Vec<(Action, f64)> {
    let total: u32 = node.edges.iter().map(|e| e.stats.visits).sum();
    let sqrt_total = (total as f64).sqrt();
    node.edges
        .iter()
        .map(|e| {
            let u = c_puct * e.stats.prior * sqrt_total / (1.0 + e.stats.visits as f64);
            (e.action, e.stats.mean + u)
        })
        .collect()
}

fn puct_index<S>(node: &DecisionNode<S>, c_puct: f64) -> Result<usize> {
    if !node.expanded {
        return Err(Error::contract("puct_select on an unexpanded node"));
    }
    if node.edges.is_empty() {
        return Err(Error::contract("puct_select on a node without actions"));
    }
    let total: u32 = node.edges.iter().map(|e| e.stats.visits).sum();
    let sqrt_total = (total as f64).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_prior = f64::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let s = e.stats.mean + c_puct * e.stats.prior * sqrt_total / (1.0 + e.stats.visits as f64);
        // Edges are stored in action order, so keeping the earlier edge on
        // a full tie implements the lower-index rule.
        if s > best_score || (s == best_score && e.stats.prior > best_prior) {
            best = i;
            best_score = s;
            best_prior = e.stats.prior;
        }
    }
    Ok(best)
}

/// Argmax of the PUCT value; ties go to the higher prior, then the lower
/// action index.
pub fn puct_select<S>(node: &DecisionNode<S>, c_puct: f64) -> Result<Action> {
    puct_index(node, c_puct).map(|i| node.edges[i].action)
}

/// Like [`puct_index`], but full ties are broken uniformly at random.
fn puct_index_random<S>(
    node: &DecisionNode<S>,
    c_puct: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let first = puct_index(node, c_puct)?;
    let total: u32 = node.edges.iter().map(|e| e.stats.visits).sum();
    let sqrt_total = (total as f64).sqrt();
    let score = |e: &Edge| {
        e.stats.mean + c_puct * e.stats.prior * sqrt_total / (1.0 + e.stats.visits as f64)
    };
    let best = &node.edges[first];
    let (best_score, best_prior) = (score(best), best.stats.prior);
    let tied: SmallVec<[usize; 4]> = (0..node.edges.len())
        .filter(|&i| score(&node.edges[i]) == best_score && node.edges[i].stats.prior == best_prior)
        .collect();
    Ok(if tied.len() > 1 {
        tied[rng.random_range(0..tied.len())]
    } else {
        first
    })
}

/// Least-visited outcome, earliest on ties; increments its count.
pub fn select_chance_outcome<S, O>(node: &mut ChanceNode<S, O>) -> Result<usize> {
    let (i, _) = node
        .slots
        .iter()
        .enumerate()
        .min_by_key(|(i, s)| (s.visits, *i))
        .ok_or_else(|| Error::contract("chance node without outcomes"))?;
    node.slots[i].visits += 1;
    Ok(i)
}

/// Sets priors from the evaluator's policy masked to the node's actions and
/// returns its value estimate.
pub fn expand_and_evaluate<S, E: Evaluator<S> + ?Sized>(
    node: &mut DecisionNode<S>,
    eval: &mut E,
) -> Result<f64> {
    let ev = eval.evaluate(&node.state)?;
    set_priors(node, &ev.policy);
    Ok(ev.value)
}

fn set_priors<S>(node: &mut DecisionNode<S>, policy: &[f64; 4]) {
    let mass: f64 = node.edges.iter().map(|e| policy[e.action.index()]).sum();
    if mass > 0.0 && mass.is_finite() && node.edges.iter().all(|e| policy[e.action.index()] >= 0.0)
    {
        for e in node.edges.iter_mut() {
            e.stats.prior = policy[e.action.index()] / mass;
        }
    } else {
        log::warn!("degenerate policy {policy:?} over legal actions; using uniform priors");
        let k = node.edges.len() as f64;
        for e in node.edges.iter_mut() {
            e.stats.prior = 1.0 / k;
        }
    }
    node.expanded = true;
}

/// One traversed link, leaf-ward order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathStep {
    Edge { node: usize, edge: usize },
    Outcome { chance: usize, slot: usize },
}

#[derive(Clone, Debug)]
pub struct SearchTree<S, O> {
    cfg: SearchConfig,
    decisions: Vec<DecisionNode<S>>,
    chances: Vec<ChanceNode<S, O>>,
    iterations: u32,
    tie_break: Option<ChaCha8Rng>,
}

impl<S: Clone, O: Clone> SearchTree<S, O> {
    /// Creates the tree and expands the root. The root evaluation does not
    /// count against the budget.
    pub fn new<M, E>(model: &M, root: S, cfg: SearchConfig, eval: &mut E) -> Result<Self>
    where
        M: SearchModel<State = S, Outcome = O>,
        E: Evaluator<S> + ?Sized,
    {
        cfg.validate()?;
        let legal = model.legal_actions(&root);
        if legal.is_empty() {
            return Err(Error::contract("search root has no legal action"));
        }
        let mut node = DecisionNode::new(root, legal);
        expand_and_evaluate(&mut node, eval)?;
        Ok(SearchTree {
            cfg,
            decisions: vec![node],
            chances: Vec::new(),
            iterations: 0,
            tie_break: None,
        })
    }

    /// Breaks full PUCT ties uniformly at random instead of by prior and
    /// action order.
    pub fn with_random_ties(mut self, seed: u64) -> Self {
        self.tie_break = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn root(&self) -> &DecisionNode<S> {
        &self.decisions[0]
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn decision_nodes(&self) -> &[DecisionNode<S>] {
        &self.decisions
    }

    pub fn chance_nodes(&self) -> &[ChanceNode<S, O>] {
        &self.chances
    }

    /// Mixes Dirichlet noise into the root priors.
    pub fn add_root_noise<R: Rng + ?Sized>(
        &mut self,
        noise: DirichletNoise,
        rng: &mut R,
    ) -> Result<()> {
        let gamma = Gamma::new(noise.alpha, 1.0)
            .map_err(|e| Error::config(format!("dirichlet alpha: {e}")))?;
        let root = &mut self.decisions[0];
        let draws: Vec<f64> = root.edges.iter().map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum <= 0.0 {
            return Ok(());
        }
        for (e, d) in root.edges.iter_mut().zip(draws) {
            e.stats.prior = (1.0 - noise.epsilon) * e.stats.prior + noise.epsilon * d / sum;
        }
        Ok(())
    }

    pub fn run<M, E>(&mut self, model: &M, eval: &mut E) -> Result<()>
    where
        M: SearchModel<State = S, Outcome = O>,
        E: Evaluator<S> + ?Sized,
    {
        while self.iterations < self.cfg.budget {
            self.iterate(model, eval)?;
        }
        Ok(())
    }

    /// One select / expand-and-evaluate / backup pass.
    pub fn iterate<M, E>(&mut self, model: &M, eval: &mut E) -> Result<()>
    where
        M: SearchModel<State = S, Outcome = O>,
        E: Evaluator<S> + ?Sized,
    {
        let mut path = Vec::new();
        let mut node = 0usize;
        let leaf_value = 'descend: loop {
            let ei = match &mut self.tie_break {
                Some(rng) => puct_index_random(&self.decisions[node], self.cfg.c_puct, rng)?,
                None => puct_index(&self.decisions[node], self.cfg.c_puct)?,
            };
            path.push(PathStep::Edge { node, edge: ei });
            let mut chance = match self.decisions[node].edges[ei].child {
                Child::Decision(id) => {
                    node = id;
                    continue 'descend;
                }
                Child::Terminal => break 'descend 0.0,
                Child::Chance(id) => id,
                Child::Unvisited => {
                    let d = &self.decisions[node];
                    let link = model.expand(&d.state, d.edges[ei].action)?;
                    self.decisions[node].edges[ei].transit = link.transit;
                    let (child, value) = self.attach(model, link.target, eval)?;
                    self.decisions[node].edges[ei].child = child;
                    match child {
                        Child::Chance(id) => id,
                        _ => break 'descend value,
                    }
                }
            };
            // Walk through (possibly nested) chance nodes.
            loop {
                let slot = select_chance_outcome(&mut self.chances[chance])?;
                path.push(PathStep::Outcome { chance, slot });
                match self.chances[chance].slots[slot].child {
                    Child::Decision(id) => {
                        node = id;
                        continue 'descend;
                    }
                    Child::Terminal => break 'descend 0.0,
                    Child::Chance(id) => chance = id,
                    Child::Unvisited => {
                        let c = &self.chances[chance];
                        let link = model.resolve(&c.state, c.action, &c.slots[slot].outcome)?;
                        self.chances[chance].slots[slot].transit = link.transit;
                        let (child, value) = self.attach(model, link.target, eval)?;
                        self.chances[chance].slots[slot].child = child;
                        match child {
                            Child::Chance(id) => chance = id,
                            _ => break 'descend value,
                        }
                    }
                }
            }
        };
        self.backup(&path, leaf_value);
        self.iterations += 1;
        Ok(())
    }

    /// Materializes a new child. Decision children are evaluated at once;
    /// the returned value is meaningless for chance children.
    fn attach<M, E>(
        &mut self,
        model: &M,
        target: Target<S, O>,
        eval: &mut E,
    ) -> Result<(Child, f64)>
    where
        M: SearchModel<State = S, Outcome = O>,
        E: Evaluator<S> + ?Sized,
    {
        match target {
            Target::Terminal => Ok((Child::Terminal, 0.0)),
            Target::Decision(state) => {
                let legal = model.legal_actions(&state);
                if legal.is_empty() {
                    return Err(Error::contract(
                        "model produced a decision state without actions",
                    ));
                }
                let mut node = DecisionNode::new(state, legal);
                let v = expand_and_evaluate(&mut node, eval)?;
                self.decisions.push(node);
                Ok((Child::Decision(self.decisions.len() - 1), v))
            }
            Target::Chance {
                state,
                action,
                outcomes,
            } => {
                if outcomes.is_empty() {
                    return Err(Error::contract(
                        "model produced a chance node without outcomes",
                    ));
                }
                self.chances.push(ChanceNode::new(state, action, outcomes));
                Ok((Child::Chance(self.chances.len() - 1), 0.0))
            }
        }
    }

    /// Leaf-to-root: `v <- sum(gamma^off * r) + gamma^elapsed * v` per link;
    /// decision edges accumulate `v`, chance outcomes pass it through.
    pub fn backup(&mut self, path: &[PathStep], leaf_value: f64) {
        let gamma = self.cfg.gamma;
        let mut v = leaf_value;
        for step in path.iter().rev() {
            match *step {
                PathStep::Edge { node, edge } => {
                    let e = &mut self.decisions[node].edges[edge];
                    v = e.transit.discounted(gamma, v);
                    e.stats.visits += 1;
                    e.stats.total += v;
                    e.stats.mean = e.stats.total / e.stats.visits as f64;
                }
                PathStep::Outcome { chance, slot } => {
                    v = self.chances[chance].slots[slot]
                        .transit
                        .discounted(gamma, v);
                }
            }
        }
    }

    pub fn result(&self) -> SearchResult {
        let mut r = SearchResult {
            visits: [0; 4],
            q: [0.0; 4],
            priors: [0.0; 4],
            legal: ActionSet::EMPTY,
        };
        for (a, s) in self.root().stats() {
            let i = a.index();
            r.visits[i] = s.visits;
            r.q[i] = s.mean;
            r.priors[i] = s.prior;
            r.legal.insert(a);
        }
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchResult {
    pub visits: [u32; 4],
    pub q: [f64; 4],
    pub priors: [f64; 4],
    pub legal: ActionSet,
}

impl SearchResult {
    /// Most visited action; ties by action index.
    pub fn most_visited(&self) -> Action {
        let mut best = self.legal.first().unwrap_or(Action::Up);
        for a in self.legal.iter() {
            if self.visits[a.index()] > self.visits[best.index()] {
                best = a;
            }
        }
        best
    }
}

/// Full search from `root`; returns root statistics. Root must be
/// non-terminal with at least one legal action.
pub fn run_search<M, E>(
    model: &M,
    root: M::State,
    cfg: SearchConfig,
    eval: &mut E,
) -> Result<SearchResult>
where
    M: SearchModel,
    E: Evaluator<M::State> + ?Sized,
{
    let mut tree = SearchTree::new(model, root, cfg, eval)?;
    tree.run(model, eval)?;
    Ok(tree.result())
}

/// `pi(a) = N(a)^(1/tau) / sum_b N(b)^(1/tau)`.
pub fn visits_to_policy(visits: &[u32; 4], tau: f64) -> Result<[f64; 4]> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("tau {tau} must be > 0")));
    }
    let max = *visits.iter().max().expect("four entries");
    if max == 0 {
        return Err(Error::contract("visits_to_policy with all-zero counts"));
    }
    // Normalizing by the max keeps large exponents finite.
    let mut pi = [0.0; 4];
    for (p, &n) in pi.iter_mut().zip(visits) {
        *p = (n as f64 / max as f64).powf(1.0 / tau);
    }
    let sum: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= sum;
    }
    Ok(pi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveMode {
    Sample,
    Argmax,
}

pub fn choose_move<R: Rng + ?Sized>(pi: &[f64; 4], mode: MoveMode, rng: &mut R) -> Action {
    match mode {
        MoveMode::Argmax => {
            let mut best = 0;
            for i in 1..4 {
                if pi[i] > pi[best] {
                    best = i;
                }
            }
            Action::ALL[best]
        }
        MoveMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = None;
            for (i, &p) in pi.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                acc += p;
                last = Some(i);
                if u < acc {
                    return Action::ALL[i];
                }
            }
            // Rounding left u above the cumulative sum.
            Action::ALL[last.unwrap_or(0)]
        }
    }
}

/// The Snake game as a search model. Apple placements are chance outcomes.
#[derive(Clone, Copy, Debug, Default)]
pub struct SnakeModel;

fn snake_link(out: crate::env::AdvanceOutcome) -> Result<Link<GameState, Cell>> {
    let target = if out.terminal {
        Target::Terminal
    } else if out.chance_boundary {
        let action = out.next.legal_mask().first().expect("forced move");
        let outcomes = out.next.chance_cells(action)?;
        Target::Chance {
            state: out.next,
            action,
            outcomes,
        }
    } else {
        Target::Decision(out.next)
    };
    Ok(Link {
        transit: out.transit,
        target,
    })
}

impl SearchModel for SnakeModel {
    type State = GameState;
    type Outcome = Cell;

    fn legal_actions(&self, state: &GameState) -> ActionSet {
        if state.is_terminal() {
            ActionSet::EMPTY
        } else {
            state.legal_mask()
        }
    }

    fn expand(&self, state: &GameState, action: Action) -> Result<Link<GameState, Cell>> {
        if state.eats(action) && state.score() + 1 < state.n() * state.n() {
            let outcomes = state.chance_cells(action)?;
            return Ok(Link {
                transit: Transit::default(),
                target: Target::Chance {
                    state: state.clone(),
                    action,
                    outcomes,
                },
            });
        }
        snake_link(state.advance(action, &mut AppleSource::Enumerate)?)
    }

    fn resolve(
        &self,
        state: &GameState,
        action: Action,
        cell: &Cell,
    ) -> Result<Link<GameState, Cell>> {
        snake_link(state.resolve_chance(action, *cell)?)
    }
}
