//! Chance-node tree search and a self-play policy/value network for Snake,
//! with deterministic baselines and closed-form analysis of the
//! Hamiltonian-cycle strategy.

pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod mcts;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod selfcheck;
pub mod selfplay;

pub use env::{Action, ActionSet, AppleSource, Cell, GameState, Status};
pub use error::{Error, Result};
