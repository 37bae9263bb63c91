//! Command-line surface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::analyze;
use crate::error::{Error, Result};
use crate::eval::{emit_table, evaluate, make_agent, AgentKind, EvalReport, RunConfig};
use crate::selfcheck;
use crate::selfplay::{read_records, replay_game, series_csv, training_loop};

#[derive(Parser, Debug)]
#[command(
    name = "snakezero",
    version,
    about = "Train, evaluate and analyse Snake agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flags that override the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Flat TOML file of run settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub board: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub games: Option<u64>,
    /// Steps per game; 0 disables the limit.
    #[arg(long, global = true, value_name = "N")]
    pub time_limit: Option<u32>,
    /// Search budget; 0 makes the network agent play its raw policy.
    #[arg(long, global = true, value_name = "N")]
    pub budget: Option<u32>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Root noise concentration for self-play search; 0 disables it.
    #[arg(long, global = true, value_name = "ALPHA")]
    pub dirichlet_alpha: Option<f64>,
    /// Repeat to compare several agents in one table.
    #[arg(long, global = true, value_enum)]
    pub agent: Vec<AgentKind>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Self-play training; writes logs and checkpoints to --out.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Play evaluation games and print the comparison table.
    Eval,
    /// Closed-form results for the Hamiltonian strategy and bounds.
    Analyze {
        /// Also compute the exact win probability by convolution.
        #[arg(long)]
        exact: bool,
        /// Print a JSON document instead of key=value lines.
        #[arg(long)]
        json: bool,
    },
    /// Windowed behavioural series from a game log.
    Metrics { input: PathBuf },
    /// Re-simulate every game in a log and verify it.
    Replay { input: PathBuf },
    /// Gradient check, search oracle and environment property suites.
    Selfcheck,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.board {
            cfg.board = v;
        }
        if let Some(v) = self.games {
            cfg.games = Some(v);
        }
        if let Some(v) = self.time_limit {
            cfg.time_limit = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = Some(v);
        }
        if let Some(v) = &self.checkpoint {
            cfg.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.dirichlet_alpha {
            cfg.dirichlet_alpha = v;
        }
        if let Some(&a) = self.agent.first() {
            cfg.agent = a;
        }
        Ok(cfg)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Train { resume } => {
            let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let summary = training_loop(&cfg.train_config(), &dir, *resume)?;
            emit(
                out,
                &format!(
                    "{} games played; logs in {}\n",
                    summary.games_played,
                    dir.display()
                ),
            )?;
        }
        Command::Eval => {
            let kinds = if cli.overrides.agent.is_empty() {
                vec![cfg.agent]
            } else {
                cli.overrides.agent.clone()
            };
            let mut reports: Vec<EvalReport> = Vec::new();
            for kind in kinds {
                let c = RunConfig {
                    agent: kind,
                    ..cfg.clone()
                };
                let mut agent = make_agent(&c)?;
                reports.push(evaluate(
                    agent.as_mut(),
                    c.board,
                    c.limit(),
                    c.eval_games(),
                    c.seed,
                )?);
            }
            let (text, csv) = emit_table(&reports);
            emit(out, &text)?;
            if let Some(path) = &cfg.out {
                write_file(path, &csv)?;
                write_file(
                    &path.with_extension("json"),
                    &serde_json::to_string_pretty(&reports)?,
                )?;
            }
        }
        Command::Analyze { exact, json } => {
            let report = analyze(cfg.board, cfg.time_limit as u64, *exact)?;
            let text = if *json {
                serde_json::to_string_pretty(&report)?
            } else {
                report.to_key_values()
            };
            emit(out, &format!("{text}\n"))?;
        }
        Command::Metrics { input } => {
            let records = read_records(input)?;
            let trajectories = records
                .iter()
                .map(replay_game)
                .collect::<Result<Vec<_>>>()?;
            let text = series_csv(&trajectories)?;
            match &cfg.out {
                Some(path) => write_file(path, &text)?,
                None => emit(out, &text)?,
            }
        }
        Command::Replay { input } => {
            let records = read_records(input)?;
            let mut steps = 0u64;
            for r in &records {
                let t = replay_game(r)?;
                steps += t.actions.len() as u64;
            }
            emit(
                out,
                &format!(
                    "{} games verified, {steps} transitions, 0 illegal\n",
                    records.len()
                ),
            )?;
        }
        Command::Selfcheck => {
            let checks = selfcheck::run_all(cfg.seed);
            for c in &checks {
                emit(out, &format!("{}\n", c.line()))?;
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

/// Parses `args` and runs the command. Exit status: 0 on success, 1 on a
/// usage error, 2 on a runtime error or a failed check.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
