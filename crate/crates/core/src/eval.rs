//! Evaluation harness and run configuration.

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{Agent, HamiltonianAgent, NaiveSearchAgent, RandomAgent, NAIVE_BUDGET};
use crate::checkpoint;
use crate::env::{encode_features, Action, AppleSource, GameState, Status, DEFAULT_TIME_LIMIT};
use crate::error::{Error, Result};
use crate::mcts::{run_search, DirichletNoise, SearchConfig, SnakeModel};
use crate::net::{LossConfig, Network, NetworkEvaluator};
use crate::selfplay::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    #[value(name = "alphazero")]
    #[serde(rename = "alphazero")]
    AlphaZero,
    Random,
    Hamiltonian,
    Naive,
}

/// Flat run configuration; every field can be set from a config file and
/// overridden on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub board: usize,
    /// Steps per game; 0 disables the limit.
    pub time_limit: u32,
    /// Defaults to 100 for the naive agent, 6000 for training, else 1000.
    pub games: Option<u64>,
    pub seed: u64,
    pub agent: AgentKind,
    /// Defaults to 10000 for the naive agent, else 200.
    pub budget: Option<u32>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gamma: f64,
    pub tau: f64,
    pub c_puct: f64,
    pub lr: f64,
    pub momentum: f64,
    pub c_l2: f64,
    /// Root noise concentration for self-play search; 0 disables noise.
    pub dirichlet_alpha: f64,
    /// Weight of the noise in the mixed root priors.
    pub dirichlet_epsilon: f64,
    pub batches: usize,
    pub batch_size: usize,
    pub buffer_games: usize,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        let loss = LossConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            board: train.board,
            time_limit: DEFAULT_TIME_LIMIT,
            games: None,
            seed: 0,
            agent: AgentKind::AlphaZero,
            budget: None,
            checkpoint: None,
            out: None,
            gamma: search.gamma,
            tau: search.tau,
            c_puct: search.c_puct,
            lr: loss.lr,
            momentum: loss.momentum,
            c_l2: loss.c_l2,
            dirichlet_alpha: 0.0,
            dirichlet_epsilon: 0.25,
            batches: train.batches,
            batch_size: train.batch_size,
            buffer_games: train.buffer_games,
            checkpoint_every: train.checkpoint_every,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn limit(&self) -> Option<u32> {
        (self.time_limit > 0).then_some(self.time_limit)
    }

    pub fn eval_games(&self) -> u64 {
        self.games.unwrap_or(match self.agent {
            AgentKind::Naive => 100,
            _ => 1000,
        })
    }

    pub fn budget(&self) -> u32 {
        self.budget.unwrap_or(match self.agent {
            AgentKind::Naive => NAIVE_BUDGET,
            _ => SearchConfig::default().budget,
        })
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            c_puct: self.c_puct,
            tau: self.tau,
            budget: self.budget().max(1),
            gamma: self.gamma,
            dirichlet: (self.dirichlet_alpha > 0.0).then_some(DirichletNoise {
                alpha: self.dirichlet_alpha,
                epsilon: self.dirichlet_epsilon,
            }),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            board: self.board,
            time_limit: self.limit(),
            games: self.games.unwrap_or(TrainConfig::default().games),
            seed: self.seed,
            search: SearchConfig {
                budget: self.budget.unwrap_or(SearchConfig::default().budget),
                ..self.search()
            },
            loss: LossConfig {
                c_l2: self.c_l2,
                lr: self.lr,
                momentum: self.momentum,
            },
            batches: self.batches,
            batch_size: self.batch_size,
            buffer_games: self.buffer_games,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

/// Plays with a trained network: search with the given budget and take the
/// most visited action, or with budget 0 the highest-prior legal action.
pub struct NetworkAgent {
    net: Network<f32>,
    search: SearchConfig,
    raw_policy: bool,
}

impl NetworkAgent {
    pub fn new(net: Network<f32>, search: SearchConfig, budget: u32) -> Result<Self> {
        search.validate()?;
        Ok(NetworkAgent {
            net,
            search,
            raw_policy: budget == 0,
        })
    }
}

impl Agent for NetworkAgent {
    fn name(&self) -> &str {
        "AlphaZero"
    }

    fn act(&mut self, state: &GameState, _rng: &mut dyn RngCore) -> Result<Action> {
        let legal = state.legal_actions()?;
        let first = legal
            .first()
            .ok_or_else(|| Error::contract("no legal action"))?;
        if self.raw_policy {
            let out = self.net.forward(&encode_features(state, self.net.n())?)?;
            let mut best = first;
            for a in legal.iter() {
                if out.policy[a.index()] > out.policy[best.index()] {
                    best = a;
                }
            }
            return Ok(best);
        }
        let mut eval = NetworkEvaluator::new(&self.net);
        Ok(run_search(&SnakeModel, state.clone(), self.search, &mut eval)?.most_visited())
    }
}

pub fn make_agent(cfg: &RunConfig) -> Result<Box<dyn Agent>> {
    Ok(match cfg.agent {
        AgentKind::Random => Box::new(RandomAgent),
        AgentKind::Hamiltonian => Box::new(HamiltonianAgent::new(cfg.board)?),
        AgentKind::Naive => Box::new(NaiveSearchAgent::new(cfg.search())?),
        AgentKind::AlphaZero => {
            let path = cfg
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::config("the alphazero agent needs --checkpoint"))?;
            let net = checkpoint::load(path)?.net;
            if net.n() != cfg.board {
                return Err(Error::config(format!(
                    "checkpoint is for board {}, configured board is {}",
                    net.n(),
                    cfg.board
                )));
            }
            Box::new(NetworkAgent::new(net, cfg.search(), cfg.budget())?)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub seed: u64,
    pub score: usize,
    pub win: bool,
    pub steps: u32,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: String,
    pub games: u64,
    pub results: Vec<GameResult>,
    pub average_score: Option<f64>,
    pub wins: u64,
    /// Two standard errors of the average score.
    pub band: Option<f64>,
}

impl EvalReport {
    pub fn from_results(agent: &str, results: Vec<GameResult>) -> Self {
        let k = results.len();
        let (average_score, band) = if k == 0 {
            (None, None)
        } else {
            let mean = results.iter().map(|r| r.score as f64).sum::<f64>() / k as f64;
            let band = (k > 1).then(|| {
                let var = results
                    .iter()
                    .map(|r| (r.score as f64 - mean).powi(2))
                    .sum::<f64>()
                    / (k - 1) as f64;
                2.0 * (var / k as f64).sqrt()
            });
            (Some(mean), band)
        };
        EvalReport {
            agent: agent.to_string(),
            games: k as u64,
            wins: results.iter().filter(|r| r.win).count() as u64,
            results,
            average_score,
            band,
        }
    }
}

/// Apple placement and agent randomness come from separate streams of the
/// same per-game seed.
pub fn play_game(
    agent: &mut dyn Agent,
    n: usize,
    limit: Option<u32>,
    seed: u64,
) -> Result<GameResult> {
    let mut apples = ChaCha8Rng::seed_from_u64(seed);
    let mut moves = ChaCha8Rng::seed_from_u64(seed);
    moves.set_stream(1);
    let mut state = GameState::new_game(n, &mut apples)?.with_time_limit(limit);
    while !state.is_terminal() {
        let legal = state.legal_actions()?;
        let action = match (legal.len(), legal.first()) {
            (1, Some(a)) => a,
            _ => agent.act(&state, &mut moves)?,
        };
        state.apply(action, &mut AppleSource::Random(&mut apples))?;
    }
    Ok(GameResult {
        seed,
        score: state.score(),
        win: state.status() == Status::Won,
        steps: state.time_index(),
        status: state.status(),
    })
}

/// Plays `games` games with seeds `seed, seed + 1, ...`.
pub fn evaluate(
    agent: &mut dyn Agent,
    n: usize,
    limit: Option<u32>,
    games: u64,
    seed: u64,
) -> Result<EvalReport> {
    let results = (0..games)
        .map(|g| {
            let r = play_game(agent, n, limit, seed.wrapping_add(g));
            if g % 100 == 99 {
                log::info!("{}: {} of {games} games", agent.name(), g + 1);
            }
            r
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_results(agent.name(), results))
}

const MISSING: &str = "\u{2014}";

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub strategy: String,
    pub average_score: Option<f64>,
    pub wins: u64,
    pub games: u64,
}

impl From<&EvalReport> for TableRow {
    fn from(r: &EvalReport) -> Self {
        TableRow {
            strategy: r.agent.clone(),
            average_score: r.average_score,
            wins: r.wins,
            games: r.games,
        }
    }
}

fn fmt_score(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.3}"))
        .unwrap_or_else(|| MISSING.to_string())
}

pub const TABLE_HEADER: &str = "strategy,average_score,win_rate";

/// Aligned text table and CSV of the same rows.
pub fn emit_table(reports: &[EvalReport]) -> (String, String) {
    let rows: Vec<TableRow> = reports.iter().map(TableRow::from).collect();
    let width = rows
        .iter()
        .map(|r| r.strategy.chars().count())
        .chain(["Strategy".len()])
        .max()
        .unwrap_or(0);
    let mut text = format!(
        "{:<width$}  {:>13}  {}\n",
        "Strategy", "Average score", "Win rate"
    );
    let mut csv = format!("{TABLE_HEADER}\n");
    for r in &rows {
        let score = fmt_score(r.average_score);
        let rate = format!("{}/{}", r.wins, r.games);
        text.push_str(&format!(
            "{:<width$}  {:>13}  {}\n",
            r.strategy, score, rate
        ));
        csv.push_str(&format!("{},{},{}\n", r.strategy, score, rate));
    }
    (text, csv)
}

pub fn parse_table(csv: &str) -> Result<Vec<TableRow>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    if lines.next() != Some(TABLE_HEADER) {
        return Err(Error::config("table is missing its header"));
    }
    lines
        .map(|line| {
            let bad = || Error::config(format!("bad table row: {line}"));
            let mut fields = line.rsplitn(3, ',');
            let rate = fields.next().ok_or_else(bad)?;
            let score = fields.next().ok_or_else(bad)?;
            let strategy = fields.next().ok_or_else(bad)?;
            let (wins, games) = rate.split_once('/').ok_or_else(bad)?;
            Ok(TableRow {
                strategy: strategy.to_string(),
                average_score: if score == MISSING {
                    None
                } else {
                    Some(score.parse().map_err(|_| bad())?)
                },
                wins: wins.parse().map_err(|_| bad())?,
                games: games.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
