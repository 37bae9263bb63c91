//! Self-play data generation, return targets, replay buffer and the
//! play-then-train loop.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, TrainingState};
use crate::env::{
    encode_features, Action, AppleSource, Cell, Event, FeaturePlanes, GameState, Status,
    DEFAULT_TIME_LIMIT,
};
use crate::error::{Error, Result};
use crate::mcts::{choose_move, visits_to_policy, MoveMode, SearchConfig, SearchTree, SnakeModel};
use crate::metrics::{windowed_series, Metric, Trajectory, BUCKET_GAMES, SIZE_WINDOW};
use crate::net::{LossConfig, Network, NetworkEvaluator, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub board: usize,
    pub time_limit: Option<u32>,
    pub games: u64,
    pub seed: u64,
    pub search: SearchConfig,
    pub loss: LossConfig,
    pub batches: usize,
    pub batch_size: usize,
    pub buffer_games: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            board: 10,
            time_limit: Some(DEFAULT_TIME_LIMIT),
            games: 6000,
            seed: 0,
            search: SearchConfig::default(),
            loss: LossConfig::default(),
            batches: 30,
            batch_size: 100,
            buffer_games: 2000,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.loss.validate()?;
        crate::net::Layout::new(self.board)?;
        if self.batches == 0 || self.batch_size == 0 || self.buffer_games == 0 {
            return Err(Error::config(
                "batches, batch size and buffer size must be positive",
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint interval must be positive"));
        }
        Ok(())
    }
}

/// One search-driven move and the forced moves that followed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time_index: u32,
    pub pi: [f64; 4],
    pub action: Action,
    pub elapsed: u32,
    pub events: Vec<Event>,
    /// Apples placed during this segment, in order.
    pub apples: Vec<Cell>,
    /// In-memory snapshot of the decision state; rebuilt by [`replay_game`]
    /// after loading.
    #[serde(skip)]
    pub state: Option<GameState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game_index: u64,
    pub seed: u64,
    pub board: usize,
    pub time_limit: Option<u32>,
    pub start_apple: Cell,
    pub decisions: Vec<DecisionRecord>,
    pub status: Status,
    pub score: usize,
    pub steps: u32,
}

/// Plays one game with the network guiding search; moves are sampled from
/// the visit distribution.
pub fn play_selfplay_game(
    net: &Network<f32>,
    cfg: &TrainConfig,
    game_index: u64,
    seed: u64,
) -> Result<GameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GameState::new_game(cfg.board, &mut rng)?.with_time_limit(cfg.time_limit);
    let start_apple = state.apple().expect("fresh game has an apple");
    let mut decisions = Vec::new();
    while !state.is_terminal() {
        let mut eval = NetworkEvaluator::new(net);
        let mut tree = SearchTree::new(&SnakeModel, state.clone(), cfg.search, &mut eval)?;
        if let Some(noise) = cfg.search.dirichlet {
            tree.add_root_noise(noise, &mut rng)?;
        }
        tree.run(&SnakeModel, &mut eval)?;
        let res = tree.result();
        let pi = visits_to_policy(&res.visits, cfg.search.tau)?;
        let action = choose_move(&pi, MoveMode::Sample, &mut rng);
        let out = state.advance(action, &mut AppleSource::Random(&mut rng))?;
        decisions.push(DecisionRecord {
            time_index: state.time_index(),
            pi,
            action,
            elapsed: out.elapsed(),
            events: out.events().to_vec(),
            apples: out.placed.clone(),
            state: Some(state),
        });
        state = out.next;
    }
    Ok(GameRecord {
        game_index,
        seed,
        board: cfg.board,
        time_limit: cfg.time_limit,
        start_apple,
        decisions,
        status: state.status(),
        score: state.score(),
        steps: state.time_index(),
    })
}

/// Discounted return from each decision point to the end of the game.
/// Truncated games are not bootstrapped.
pub fn compute_z_targets(record: &GameRecord, gamma: f64) -> Vec<f64> {
    let mut z = vec![0.0; record.decisions.len()];
    let mut next = 0.0;
    for (i, d) in record.decisions.iter().enumerate().rev() {
        let own: f64 = d
            .events
            .iter()
            .map(|e| gamma.powi(e.offset as i32) * e.reward)
            .sum();
        next = own + gamma.powi(d.elapsed as i32) * next;
        z[i] = next;
    }
    z
}

/// Re-simulates a record one primitive step at a time and checks every
/// recorded quantity. Returns the full trajectory.
pub fn replay_game(record: &GameRecord) -> Result<Trajectory> {
    let bad = |msg: String| Error::Replay(format!("game {}: {msg}", record.game_index));
    let mut state = GameState::new_game_with_apple(record.board, record.start_apple)
        .map_err(|e| bad(format!("start: {e}")))?
        .with_time_limit(record.time_limit);
    let mut traj = Trajectory::default();
    for (k, d) in record.decisions.iter().enumerate() {
        if state.is_terminal() {
            return Err(bad(format!("decision {k} recorded after the game ended")));
        }
        if state.time_index() != d.time_index {
            return Err(bad(format!(
                "decision {k} at t={} but replay is at t={}",
                d.time_index,
                state.time_index()
            )));
        }
        if let Some(snap) = &d.state {
            if *snap != state {
                return Err(bad(format!("decision {k} state snapshot differs")));
            }
        }
        let legal = state.legal_actions()?;
        if legal.len() < 2 {
            return Err(bad(format!("decision {k} has {} legal moves", legal.len())));
        }
        let mut apples: VecDeque<Cell> = d.apples.iter().copied().collect();
        let start_t = state.time_index();
        let mut events = Vec::new();
        let mut action = d.action;
        loop {
            if !state.legal_mask().contains(action) {
                return Err(bad(format!(
                    "illegal {action:?} at t={}",
                    state.time_index()
                )));
            }
            traj.states.push(state.clone());
            traj.actions.push(action);
            let offset = state.time_index() - start_t;
            let rep = state
                .apply(action, &mut AppleSource::Scripted(&mut apples))
                .map_err(|e| bad(format!("t={}: {e}", start_t + offset)))?;
            if rep.reward != 0.0 {
                events.push(Event {
                    offset,
                    reward: rep.reward,
                });
            }
            if state.is_terminal() {
                break;
            }
            let legal = state.legal_mask();
            match (legal.len(), legal.first()) {
                (1, Some(only)) => action = only,
                _ => break,
            }
        }
        if !apples.is_empty() {
            return Err(bad(format!(
                "decision {k} left {} apples unused",
                apples.len()
            )));
        }
        if state.time_index() - start_t != d.elapsed || events != d.events {
            return Err(bad(format!("decision {k} elapsed/events differ")));
        }
    }
    if state.status() != record.status
        || state.score() != record.score
        || state.time_index() != record.steps
    {
        return Err(bad(format!(
            "final {:?}/{}/{} recorded as {:?}/{}/{}",
            state.status(),
            state.score(),
            state.time_index(),
            record.status,
            record.score,
            record.steps
        )));
    }
    traj.states.push(state);
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub features: FeaturePlanes,
    pub pi: [f64; 4],
    pub z: f64,
}

pub fn training_examples(record: &GameRecord, gamma: f64) -> Result<Vec<TrainingExample>> {
    let z = compute_z_targets(record, gamma);
    let mut states: Vec<GameState> = Vec::with_capacity(record.decisions.len());
    if record.decisions.iter().any(|d| d.state.is_none()) {
        // Rebuild snapshots from the trajectory's decision times.
        let traj = replay_game(record)?;
        let mut it = traj.states.into_iter();
        for d in &record.decisions {
            let s = it
                .find(|s| s.time_index() == d.time_index)
                .ok_or_else(|| Error::Replay("decision state missing".into()))?;
            states.push(s);
        }
    } else {
        states.extend(record.decisions.iter().filter_map(|d| d.state.clone()));
    }
    states
        .iter()
        .zip(&record.decisions)
        .zip(z)
        .map(|((s, d), z)| {
            Ok(TrainingExample {
                features: encode_features(s, record.board)?,
                pi: d.pi,
                z,
            })
        })
        .collect()
}

/// Examples from the most recent `capacity` games.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    examples: VecDeque<TrainingExample>,
    per_game: VecDeque<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity_games: usize) -> Self {
        ReplayBuffer {
            capacity: capacity_games,
            examples: VecDeque::new(),
            per_game: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push_game(&mut self, examples: Vec<TrainingExample>) {
        self.per_game.push_back(examples.len());
        self.examples.extend(examples);
        while self.per_game.len() > self.capacity {
            let k = self.per_game.pop_front().expect("nonempty");
            self.examples.drain(..k);
        }
    }

    pub fn games(&self) -> usize {
        self.per_game.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn game_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_game.iter().copied()
    }

    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.examples.iter()
    }

    pub fn get(&self, i: usize) -> Option<&TrainingExample> {
        self.examples.get(i)
    }

    pub(crate) fn from_parts(
        capacity: usize,
        per_game: Vec<usize>,
        examples: Vec<TrainingExample>,
    ) -> Result<Self> {
        if per_game.iter().sum::<usize>() != examples.len() || per_game.len() > capacity {
            return Err(Error::Integrity("replay buffer counts do not match".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            examples: examples.into(),
            per_game: per_game.into(),
        })
    }
}

/// Runs `cfg.batches` minibatch updates sampled uniformly with replacement;
/// returns the mean pre-update batch loss. On error the network is restored
/// to its state before the call.
pub fn train_iteration<R: Rng + ?Sized>(
    net: &mut Network<f32>,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if buffer.is_empty() {
        return Err(Error::contract("training on an empty replay buffer"));
    }
    let snapshot = net.clone();
    let run = |net: &mut Network<f32>, rng: &mut R| -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..cfg.batches {
            let batch: Vec<Sample<'_>> = (0..cfg.batch_size)
                .map(|_| {
                    let ex = buffer
                        .get(rng.random_range(0..buffer.len()))
                        .expect("in range");
                    Sample {
                        features: &ex.features,
                        pi: ex.pi,
                        z: ex.z,
                    }
                })
                .collect();
            let g = net.backward(&batch, cfg.loss.c_l2)?;
            net.sgd_update(&g.values, cfg.loss.lr, cfg.loss.momentum)?;
            total += g.loss;
        }
        Ok(total / cfg.batches as f64)
    };
    run(net, rng).inspect_err(|_| *net = snapshot)
}

/// Per-game log row.
#[derive(Clone, Debug, PartialEq)]
pub struct GameRow {
    pub game_index: u64,
    pub score: usize,
    pub win: bool,
    pub steps: u32,
    pub mean_loss: Option<f64>,
}

pub const METRICS_HEADER: &str = "game_index,score,win,steps,mean_loss";

impl GameRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.game_index,
            self.score,
            u8::from(self.win),
            self.steps,
            self.mean_loss.map(|l| l.to_string()).unwrap_or_default()
        )
    }
}

/// Complete mutable state of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: Network<f32>,
    pub rng: ChaCha8Rng,
    pub buffer: ReplayBuffer,
    pub games_played: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Network::init(cfg.board, cfg.seed)?;
        // Separate stream from the initialiser's.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5e1f_0000_0001);
        let buffer = ReplayBuffer::new(cfg.buffer_games);
        Ok(Trainer {
            cfg,
            net,
            rng,
            buffer,
            games_played: 0,
        })
    }

    /// Plays one self-play game, stores its examples and trains.
    pub fn step(&mut self) -> Result<(GameRecord, GameRow)> {
        let game_seed = self.rng.next_u64();
        let record = play_selfplay_game(&self.net, &self.cfg, self.games_played, game_seed)?;
        self.buffer
            .push_game(training_examples(&record, self.cfg.search.gamma)?);
        let mean_loss = match train_iteration(&mut self.net, &self.buffer, &self.cfg, &mut self.rng)
        {
            Ok(l) => Some(l),
            Err(Error::Numeric(msg)) => {
                log::warn!("game {}: update skipped: {msg}", self.games_played);
                None
            }
            Err(e) => return Err(e),
        };
        let row = GameRow {
            game_index: self.games_played,
            score: record.score,
            win: record.status == Status::Won,
            steps: record.steps,
            mean_loss,
        };
        self.games_played += 1;
        Ok((record, row))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            hyperparameters: self.cfg.clone(),
            net: self.net.clone(),
            training: Some(TrainingState {
                games_played: self.games_played,
                rng: self.rng.clone(),
                buffer: self.buffer.clone(),
            }),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if ck.net.n() != cfg.board {
            return Err(Error::config(format!(
                "checkpoint board {} differs from configured {}",
                ck.net.n(),
                cfg.board
            )));
        }
        let stored = TrainConfig {
            games: cfg.games,
            ..ck.hyperparameters.clone()
        };
        if stored != cfg {
            return Err(Error::config(
                "checkpoint was trained with different settings; only the game count may change on resume",
            ));
        }
        let t = ck
            .training
            .ok_or_else(|| Error::config("checkpoint has no training state"))?;
        let buffer = t.buffer;
        Ok(Trainer {
            cfg,
            net: ck.net,
            rng: t.rng,
            buffer,
            games_played: t.games_played,
        })
    }
}

/// Output file names inside a training directory.
pub struct RunPaths {
    pub metrics: PathBuf,
    pub games: PathBuf,
    pub checkpoint: PathBuf,
    pub series: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            metrics: dir.join("metrics.csv"),
            games: dir.join("games.jsonl"),
            checkpoint: dir.join("checkpoint.json"),
            series: dir.join("series.csv"),
        }
    }
}

fn keep_lines(path: &Path, keep: usize) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .take(keep)
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    if lines.len() < keep {
        return Err(Error::Integrity(format!(
            "{} has {} lines, checkpoint expects {keep}",
            path.display(),
            lines.len()
        )));
    }
    let mut text = lines.join("\n");
    if keep > 0 {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append(path: &Path) -> Result<BufWriter<File>> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub games_played: u64,
    pub rows: Vec<GameRow>,
}

/// Alternates self-play and training until `cfg.games` games are done,
/// appending to `metrics.csv` and `games.jsonl` in `dir` and checkpointing
/// every `cfg.checkpoint_every` games. With `resume`, continues from
/// `dir/checkpoint.json` and drops log lines written after it.
pub fn training_loop(cfg: &TrainConfig, dir: &Path, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = RunPaths::new(dir);
    let mut trainer = if resume && paths.checkpoint.exists() {
        let t = Trainer::from_checkpoint(checkpoint::load(&paths.checkpoint)?, cfg.clone())?;
        keep_lines(&paths.metrics, 1 + t.games_played as usize)?;
        keep_lines(&paths.games, t.games_played as usize)?;
        log::info!("resuming at game {}", t.games_played);
        t
    } else {
        fs::write(&paths.metrics, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(&paths.metrics, e))?;
        fs::write(&paths.games, "").map_err(|e| Error::io(&paths.games, e))?;
        Trainer::new(cfg.clone())?
    };
    let mut metrics = append(&paths.metrics)?;
    let mut games = append(&paths.games)?;
    let mut rows = Vec::new();
    while trainer.games_played < cfg.games {
        let (record, row) = trainer.step()?;
        log::info!(
            "game {} score {} steps {} loss {:?}",
            row.game_index,
            row.score,
            row.steps,
            row.mean_loss
        );
        writeln!(metrics, "{}", row.to_csv()).map_err(|e| Error::io(&paths.metrics, e))?;
        serde_json::to_writer(&mut games, &record)?;
        writeln!(games).map_err(|e| Error::io(&paths.games, e))?;
        rows.push(row);
        if trainer.games_played % cfg.checkpoint_every == 0 || trainer.games_played == cfg.games {
            metrics.flush().map_err(|e| Error::io(&paths.metrics, e))?;
            games.flush().map_err(|e| Error::io(&paths.games, e))?;
            checkpoint::save(&trainer.to_checkpoint(), &paths.checkpoint)?;
        }
    }
    metrics.flush().map_err(|e| Error::io(&paths.metrics, e))?;
    games.flush().map_err(|e| Error::io(&paths.games, e))?;
    write_series(&paths.games, &paths.series)?;
    Ok(TrainSummary {
        games_played: trainer.games_played,
        rows,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<GameRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Windowed behavioral series for every metric, one CSV row per bucket.
/// Buckets with no samples in the size window print a dash.
pub fn series_csv(trajectories: &[Trajectory]) -> Result<String> {
    let mut text = String::from("metric,games,mean,std_dev,band,count\n");
    for m in Metric::ALL {
        for p in windowed_series(trajectories, m, SIZE_WINDOW, BUCKET_GAMES)? {
            let num = |x: f64| {
                if p.count == 0 {
                    "\u{2014}".to_string()
                } else {
                    x.to_string()
                }
            };
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.name(),
                p.games,
                num(p.mean),
                num(p.std_dev),
                num(p.band()),
                p.count
            ));
        }
    }
    Ok(text)
}

pub fn write_series(games: &Path, out: &Path) -> Result<()> {
    let records = read_records(games)?;
    let trajectories = records
        .iter()
        .map(replay_game)
        .collect::<Result<Vec<_>>>()?;
    fs::write(out, series_csv(&trajectories)?).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(decisions: Vec<(u32, Vec<Event>)>) -> GameRecord {
        GameRecord {
            game_index: 0,
            seed: 0,
            board: 4,
            time_limit: None,
            start_apple: Cell::new(3, 3),
            decisions: decisions
                .into_iter()
                .map(|(elapsed, events)| DecisionRecord {
                    time_index: 0,
                    pi: [0.25; 4],
                    action: Action::Right,
                    elapsed,
                    events,
                    apples: vec![],
                    state: None,
                })
                .collect(),
            status: Status::Won,
            score: 2,
            steps: 0,
        }
    }

    #[test]
    fn z_target_examples() {
        let r = record_with(vec![(
            3,
            vec![
                Event {
                    offset: 0,
                    reward: 1.0,
                },
                Event {
                    offset: 2,
                    reward: 10.0,
                },
            ],
        )]);
        let z = compute_z_targets(&r, 0.98);
        assert!((z[0] - 10.604).abs() < 1e-12);

        let r = record_with(vec![
            (1, vec![]),
            (
                2,
                vec![Event {
                    offset: 1,
                    reward: 5.0 / 0.98,
                }],
            ),
        ]);
        let z = compute_z_targets(&r, 0.98);
        assert!((z[1] - 5.0).abs() < 1e-12);
        assert!((z[0] - 4.9).abs() < 1e-12);

        let r = record_with(vec![(4, vec![]), (7, vec![])]);
        assert_eq!(compute_z_targets(&r, 0.98), vec![0.0, 0.0]);
    }

    fn example(z: f64) -> TrainingExample {
        TrainingExample {
            features: FeaturePlanes::zeros(4),
            pi: [0.25; 4],
            z,
        }
    }

    #[test]
    fn buffer_evicts_oldest_games() {
        let mut b = ReplayBuffer::new(2);
        b.push_game(vec![example(1.0), example(1.0)]);
        b.push_game(vec![example(2.0)]);
        b.push_game(vec![example(3.0), example(3.0), example(3.0)]);
        assert_eq!(b.games(), 2);
        assert_eq!(b.len(), 4);
        assert_eq!(b.get(0).unwrap().z, 2.0);
        assert!(b.examples().all(|e| e.z != 1.0));
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            board: 4,
            games: 2,
            seed: 3,
            search: SearchConfig {
                budget: 8,
                ..SearchConfig::default()
            },
            batches: 30,
            batch_size: 10,
            time_limit: Some(60),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_example_buffer_trains_on_copies() {
        let cfg = TrainConfig {
            batches: 1,
            batch_size: 100,
            ..tiny_cfg()
        };
        let mut net = Network::<f32>::init(4, 1).unwrap();
        let mut b = ReplayBuffer::new(10);
        b.push_game(vec![example(0.5)]);
        let e = b.get(0).unwrap().clone();
        let single = net
            .backward(
                &[Sample {
                    features: &e.features,
                    pi: e.pi,
                    z: e.z,
                }],
                cfg.loss.c_l2,
            )
            .unwrap()
            .loss;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = train_iteration(&mut net, &b, &cfg, &mut rng).unwrap();
        assert!((loss - single).abs() < 1e-12 * single.abs());
    }

    #[test]
    fn thirty_updates_per_iteration() {
        let cfg = tiny_cfg();
        let mut net = Network::<f32>::init(4, 1).unwrap();
        let mut b = ReplayBuffer::new(10);
        b.push_game(vec![example(0.5), example(-1.0)]);
        // With momentum, the buffer after k identical-gradient-free steps is
        // nonzero; count updates by replaying them manually instead.
        let mut manual = net.clone();
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = rng_a.clone();
        train_iteration(&mut net, &b, &cfg, &mut rng_a).unwrap();
        for _ in 0..30 {
            let batch: Vec<Sample<'_>> = (0..cfg.batch_size)
                .map(|_| {
                    let ex = b.get(rng_b.random_range(0..b.len())).unwrap();
                    Sample {
                        features: &ex.features,
                        pi: ex.pi,
                        z: ex.z,
                    }
                })
                .collect();
            let g = manual.backward(&batch, cfg.loss.c_l2).unwrap();
            manual
                .sgd_update(&g.values, cfg.loss.lr, cfg.loss.momentum)
                .unwrap();
        }
        assert_eq!(net, manual);
        assert_eq!(rng_a, rng_b);
    }

    #[test]
    fn selfplay_is_deterministic_and_replayable() {
        let cfg = tiny_cfg();
        let net = Network::<f32>::init(4, 2).unwrap();
        let a = play_selfplay_game(&net, &cfg, 0, 77).unwrap();
        let b = play_selfplay_game(&net, &cfg, 0, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.steps <= 60);
        for d in &a.decisions {
            let s = d.state.as_ref().unwrap();
            let legal = s.legal_mask();
            assert!(legal.len() >= 2);
            for act in Action::ALL.into_iter().filter(|a| !legal.contains(*a)) {
                assert_eq!(d.pi[act.index()], 0.0);
            }
            assert!((d.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let traj = replay_game(&a).unwrap();
        assert_eq!(traj.states.len(), a.steps as usize + 1);
        // Round trip through JSON drops snapshots; examples must not change.
        let text = serde_json::to_string(&a).unwrap();
        let loaded: GameRecord = serde_json::from_str(&text).unwrap();
        replay_game(&loaded).unwrap();
        assert_eq!(
            training_examples(&a, 0.98).unwrap(),
            training_examples(&loaded, 0.98).unwrap()
        );
    }

    #[test]
    fn replay_detects_tampering() {
        let cfg = tiny_cfg();
        let net = Network::<f32>::init(4, 2).unwrap();
        let rec = play_selfplay_game(&net, &cfg, 0, 5).unwrap();
        let mut bad = rec.clone();
        bad.score += 1;
        assert!(matches!(replay_game(&bad), Err(Error::Replay(_))));
        let mut bad = rec.clone();
        bad.decisions[0].elapsed += 1;
        assert!(matches!(replay_game(&bad), Err(Error::Replay(_))));
        let mut bad = rec;
        let d = &mut bad.decisions[0];
        let legal = d.state.as_ref().unwrap().legal_mask();
        d.action = Action::ALL
            .into_iter()
            .find(|a| !legal.contains(*a))
            .unwrap();
        d.state = None;
        assert!(matches!(replay_game(&bad), Err(Error::Replay(_))));
    }

    #[test]
    fn resume_accepts_only_a_new_game_count() {
        let cfg = tiny_cfg();
        let ck = Trainer::new(cfg.clone()).unwrap().to_checkpoint();
        let more = TrainConfig {
            games: 9,
            ..cfg.clone()
        };
        assert!(Trainer::from_checkpoint(ck.clone(), more).is_ok());
        let changed = TrainConfig {
            batch_size: 11,
            ..cfg
        };
        assert!(matches!(
            Trainer::from_checkpoint(ck, changed),
            Err(Error::InvalidConfig(_))
        ));
    }
}
