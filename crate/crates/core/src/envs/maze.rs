use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetHeader, Episode, OfflineDataset};
use super::{discrete_action, Environment, Step, GRIDMAZE_ID};
use crate::error::{Error, Result};
use crate::model::{ActionSpace, ActionValue, Actions, Trajectory};
use crate::numerics::{purpose, RngStream};

/// `#` is a wall, `G` the goal, anything else open floor. Every open cell at
/// least [`FAR_DISTANCE`] Manhattan steps from the goal is more than
/// [`MazeDataConfig::max_segment_len`] moves away from it along the maze.
pub const DEFAULT_LAYOUT: [&str; 8] = [
    "...#..#G",
    ".#.#.##.",
    ".#...#..",
    ".###.#.#",
    "...#....",
    "##.####.",
    "......#.",
    ".####...",
];

pub const MAZE_ACTIONS: usize = 5;
const MOVES: [(isize, isize); MAZE_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

/// Cells at least this many Manhattan steps from the goal count as far.
pub const FAR_DISTANCE: usize = 10;

pub type Cell = (usize, usize);

#[derive(Clone, Debug)]
pub struct GridMaze {
    rows: usize,
    cols: usize,
    open: Vec<bool>,
    goal: Cell,
    horizon: usize,
    pos: Cell,
    t: usize,
    reached: bool,
}

impl Default for GridMaze {
    fn default() -> Self {
        Self::from_layout(&DEFAULT_LAYOUT, 64).expect("default layout is valid")
    }
}

impl GridMaze {
    pub fn from_layout(layout: &[&str], horizon: usize) -> Result<Self> {
        let rows = layout.len();
        let cols = layout.first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 || layout.iter().any(|r| r.len() != cols) {
            return Err(Error::config("maze layout must be a non-empty rectangle"));
        }
        if horizon == 0 {
            return Err(Error::config("maze horizon must be positive"));
        }
        let mut open = Vec::with_capacity(rows * cols);
        let mut goal = None;
        for (r, line) in layout.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                open.push(ch != '#');
                if ch == 'G' {
                    if goal.is_some() {
                        return Err(Error::config("maze layout has more than one goal"));
                    }
                    goal = Some((r, c));
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::config("maze layout has no goal"))?;
        let maze = Self { rows, cols, open, goal, horizon, pos: goal, t: 0, reached: false };
        let dist = maze.distances_to(goal);
        if maze.open_cells().iter().any(|&c| dist[maze.index(c)].is_none()) {
            return Err(Error::config("maze is not connected"));
        }
        if maze.open_cells().len() < 2 {
            return Err(Error::config("maze needs at least one open cell besides the goal"));
        }
        Ok(maze)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    fn index(&self, (r, c): Cell) -> usize {
        r * self.cols + c
    }

    pub fn is_open(&self, cell: Cell) -> bool {
        cell.0 < self.rows && cell.1 < self.cols && self.open[self.index(cell)]
    }

    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.rows).flat_map(|r| (0..self.cols).map(move |c| (r, c))).filter(|&c| self.is_open(c)).collect()
    }

    /// Open cells other than the goal, the support of the start distribution.
    pub fn start_cells(&self) -> Vec<Cell> {
        self.open_cells().into_iter().filter(|&c| c != self.goal).collect()
    }

    pub fn manhattan_to_goal(&self, (r, c): Cell) -> usize {
        r.abs_diff(self.goal.0) + c.abs_diff(self.goal.1)
    }

    /// Cell reached by `action`; blocked moves stay put.
    pub fn move_from(&self, (r, c): Cell, action: usize) -> Cell {
        let (dr, dc) = MOVES[action];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 {
            return (r, c);
        }
        let next = (nr as usize, nc as usize);
        if self.is_open(next) {
            next
        } else {
            (r, c)
        }
    }

    /// Shortest-path step counts to `target` (None for walls).
    pub fn distances_to(&self, target: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rows * self.cols];
        dist[self.index(target)] = Some(0);
        let mut queue = VecDeque::from([target]);
        while let Some(u) = queue.pop_front() {
            let du = dist[self.index(u)].expect("queued cells have a distance");
            for a in 0..4 {
                let v = self.move_from(u, a);
                if dist[self.index(v)].is_none() {
                    dist[self.index(v)] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn state_dim_for(rows: usize, cols: usize) -> usize {
        rows * cols + 2
    }

    /// One-hot cell plus row and column scaled to `[0, 1]`.
    pub fn encode(&self, cell: Cell) -> Vec<f64> {
        let mut s = vec![0.0; self.rows * self.cols + 2];
        s[self.index(cell)] = 1.0;
        s[self.rows * self.cols] = cell.0 as f64 / (self.rows - 1).max(1) as f64;
        s[self.rows * self.cols + 1] = cell.1 as f64 / (self.cols - 1).max(1) as f64;
        s
    }

    pub fn decode(&self, state: &[f64]) -> Option<Cell> {
        if state.len() != self.state_dim() {
            return None;
        }
        let hot: Vec<usize> = (0..self.rows * self.cols).filter(|&i| state[i] == 1.0).collect();
        let [i] = hot.as_slice() else { return None };
        let cell = (i / self.cols, i % self.cols);
        (self.is_open(cell) && self.encode(cell) == state).then_some(cell)
    }

    pub fn set_start(&mut self, cell: Cell) -> Result<Vec<f64>> {
        if !self.is_open(cell) || cell == self.goal {
            return Err(Error::Env(format!("{cell:?} is not a valid start cell")));
        }
        self.pos = cell;
        self.t = 0;
        self.reached = false;
        Ok(self.encode(cell))
    }
}

impl Environment for GridMaze {
    fn id(&self) -> &'static str {
        GRIDMAZE_ID
    }

    fn state_dim(&self) -> usize {
        Self::state_dim_for(self.rows, self.cols)
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: MAZE_ACTIONS }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        let starts = self.start_cells();
        let cell = starts[rng.below(starts.len())];
        self.set_start(cell).expect("start cells are valid")
    }

    fn step(&mut self, action: &ActionValue, _rng: &mut RngStream) -> Result<Step> {
        if self.reached || self.t >= self.horizon {
            return Err(Error::Env("episode is over".into()));
        }
        let a = discrete_action(action, MAZE_ACTIONS)?;
        self.pos = self.move_from(self.pos, a);
        self.t += 1;
        self.reached = self.pos == self.goal;
        Ok(Step { state: self.encode(self.pos), done: self.reached || self.t >= self.horizon })
    }

    fn episode_return(&self) -> f64 {
        if self.reached {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeDataConfig {
    pub n: usize,
    pub seed: u64,
    /// Probability of replacing the shortest-path move with a random one.
    pub noise: f64,
    /// Segments stop after this many steps even if the waypoint is not reached.
    pub max_segment_len: usize,
}

impl MazeDataConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, noise: 0.2, max_segment_len: 12 }
    }
}

/// Noisy shortest-path walks between random pairs of open cells. A walk
/// that enters the goal ends there with return 1.
pub fn gen_maze_dataset(maze: &GridMaze, cfg: &MazeDataConfig) -> Result<OfflineDataset> {
    if cfg.n == 0 || cfg.max_segment_len == 0 {
        return Err(Error::config("maze dataset needs n >= 1 and max_segment_len >= 1"));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::config("noise must lie in [0, 1]"));
    }
    let starts = maze.start_cells();
    let cells = maze.open_cells();
    let max_len = cfg.max_segment_len.min(maze.horizon);
    let episodes = (0..cfg.n)
        .map(|i| {
            let mut rng = RngStream::derive(cfg.seed, purpose::DATA, &[i as u64]);
            let a = starts[rng.below(starts.len())];
            let b = loop {
                let b = cells[rng.below(cells.len())];
                if b != a {
                    break b;
                }
            };
            let dist = maze.distances_to(b);
            let (mut states, mut actions) = (Vec::new(), Vec::new());
            let mut pos = a;
            let mut ret = 0.0;
            while actions.len() < max_len {
                let act = if rng.bernoulli(cfg.noise) {
                    rng.below(MAZE_ACTIONS)
                } else {
                    let here = dist[maze.index(pos)].expect("connected");
                    (0..4).find(|&k| dist[maze.index(maze.move_from(pos, k))] == Some(here.saturating_sub(1))).unwrap_or(4)
                };
                states.push(maze.encode(pos));
                actions.push(act);
                pos = maze.move_from(pos, act);
                if pos == maze.goal {
                    ret = 1.0;
                    break;
                }
                if pos == b {
                    break;
                }
            }
            Episode { traj: Trajectory { states, actions: Actions::Discrete(actions) }, ret }
        })
        .collect();
    let header = DatasetHeader::new(
        GRIDMAZE_ID,
        maze.state_dim(),
        maze.action_space(),
        maze.horizon,
        format!("waypoint segments, noise {}, max length {}", cfg.noise, cfg.max_segment_len),
        cfg.seed,
    );
    OfflineDataset::new(header, episodes)
}

/// Re-simulates every trajectory and checks states, termination and returns.
pub fn validate_maze_dataset(maze: &GridMaze, data: &OfflineDataset) -> Result<()> {
    if data.header.env_id != GRIDMAZE_ID || data.header.state_dim != maze.state_dim() {
        return Err(Error::validation("dataset does not belong to this maze"));
    }
    for (i, ep) in data.episodes.iter().enumerate() {
        let Actions::Discrete(actions) = &ep.traj.actions else {
            return Err(Error::validation(format!("trajectory {i}: maze actions are discrete")));
        };
        let mut cell = None;
        for (t, s) in ep.traj.states.iter().enumerate() {
            let here = maze.decode(s).ok_or_else(|| Error::validation(format!("trajectory {i}: bad state at {t}")))?;
            if here == maze.goal {
                return Err(Error::validation(format!("trajectory {i}: continues past the goal at step {t}")));
            }
            if let Some(prev) = cell {
                if maze.move_from(prev, actions[t - 1]) != here {
                    return Err(Error::validation(format!("trajectory {i}: illegal transition at step {t}")));
                }
            }
            cell = Some(here);
        }
        let last = maze.move_from(cell.expect("non-empty"), *actions.last().expect("non-empty"));
        let expected = if last == maze.goal { 1.0 } else { 0.0 };
        if ep.ret != expected {
            return Err(Error::validation(format!("trajectory {i}: return {} but expected {expected}", ep.ret)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeAudit {
    pub trajectories: usize,
    pub successes: usize,
    pub far_starts: usize,
    pub far_start_successes: usize,
    /// Far-start successes over all trajectories.
    pub far_success_fraction: f64,
    /// Far-start successes over all successful trajectories.
    pub far_share_of_successes: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: f64,
    /// Whether some far-start trajectory shares a cell with a successful one.
    pub stitching_linked: bool,
}

pub fn maze_audit(maze: &GridMaze, data: &OfflineDataset) -> Result<MazeAudit> {
    let n = data.episodes.len();
    let mut visited: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut far = vec![false; n];
    let mut success = vec![false; n];
    for (i, ep) in data.episodes.iter().enumerate() {
        let cells: Vec<Cell> = ep
            .traj
            .states
            .iter()
            .map(|s| maze.decode(s).ok_or_else(|| Error::validation(format!("trajectory {i}: bad state"))))
            .collect::<Result<_>>()?;
        let mut mask = vec![false; maze.rows * maze.cols];
        for &c in &cells {
            mask[maze.index(c)] = true;
        }
        if let (Actions::Discrete(a), Some(&last)) = (&ep.traj.actions, cells.last()) {
            mask[maze.index(maze.move_from(last, *a.last().expect("non-empty")))] = true;
        }
        visited.push(mask);
        far[i] = maze.manhattan_to_goal(cells[0]) >= FAR_DISTANCE;
        success[i] = ep.ret == 1.0;
    }
    let linked = (0..n).filter(|&i| far[i]).any(|i| {
        (0..n).filter(|&j| success[j]).any(|j| visited[i].iter().zip(&visited[j]).any(|(a, b)| *a && *b))
    });
    let lens: Vec<usize> = data.episodes.iter().map(|e| e.traj.len()).collect();
    let successes = success.iter().filter(|&&s| s).count();
    let far_start_successes = (0..n).filter(|&i| far[i] && success[i]).count();
    Ok(MazeAudit {
        trajectories: n,
        successes,
        far_starts: far.iter().filter(|&&f| f).count(),
        far_start_successes,
        far_success_fraction: far_start_successes as f64 / n.max(1) as f64,
        far_share_of_successes: far_start_successes as f64 / successes.max(1) as f64,
        min_len: lens.iter().copied().min().unwrap_or(0),
        max_len: lens.iter().copied().max().unwrap_or(0),
        mean_len: lens.iter().sum::<usize>() as f64 / n.max(1) as f64,
        stitching_linked: linked,
    })
}

/// Success rate of uniformly random actions from uniformly random starts.
pub fn random_walk_success_rate(maze: &GridMaze, episodes: usize, seed: u64) -> f64 {
    let mut env = maze.clone();
    let mut hits = 0;
    for e in 0..episodes {
        let mut rng = RngStream::derive(seed, purpose::ROLLOUT, &[e as u64]);
        env.reset(&mut rng);
        loop {
            let a = ActionValue::Discrete(rng.below(MAZE_ACTIONS));
            if env.step(&a, &mut rng).expect("valid action").done {
                break;
            }
        }
        hits += usize::from(env.episode_return() == 1.0);
    }
    hits as f64 / episodes as f64
}
