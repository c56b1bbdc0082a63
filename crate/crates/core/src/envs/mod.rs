//! Built-in environments, offline dataset generators and the JSONL dataset
//! format.

pub mod connect4;
mod dataset;
pub mod maze;

pub use connect4::{connect4_audit, gen_connect4_dataset, validate_connect4_dataset, Connect4Audit, ConnectFour, Opponent};
pub use dataset::{
    gen_linear_gaussian_dataset, DatasetHeader, Episode, OfflineDataset, DATASET_FORMAT, DATASET_VERSION,
};
pub use maze::{gen_maze_dataset, maze_audit, random_walk_success_rate, validate_maze_dataset, GridMaze, MazeAudit, MazeDataConfig};

use crate::error::{Error, Result};
use crate::model::{ActionSpace, ActionValue};
use crate::numerics::RngStream;

pub const GRIDMAZE_ID: &str = "gridmaze-v0";
pub const CONNECT4_ID: &str = "connect4-v0";
pub const LINGAUSS_ID: &str = "lingauss-v0";

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub done: bool,
}

/// Episodic environment whose return is only known at the end.
pub trait Environment {
    fn id(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64>;
    fn step(&mut self, action: &ActionValue, rng: &mut RngStream) -> Result<Step>;
    /// Total return of the finished (or truncated) episode.
    fn episode_return(&self) -> f64;
}

/// Environment by id, with default settings.
pub fn make_env(id: &str) -> Result<Box<dyn Environment + Send>> {
    match id {
        GRIDMAZE_ID => Ok(Box::new(GridMaze::default())),
        CONNECT4_ID => Ok(Box::new(ConnectFour::default())),
        LINGAUSS_ID => Err(Error::config("lingauss-v0 is a dataset generator without an interactive environment")),
        other => Err(Error::config(format!("unknown environment id {other:?}"))),
    }
}

pub(crate) fn discrete_action(action: &ActionValue, n: usize) -> Result<usize> {
    match action {
        ActionValue::Discrete(a) if *a < n => Ok(*a),
        ActionValue::Discrete(a) => Err(Error::Env(format!("action {a} out of range for {n} choices"))),
        ActionValue::Continuous(_) => Err(Error::Env("expected a discrete action".into())),
    }
}
