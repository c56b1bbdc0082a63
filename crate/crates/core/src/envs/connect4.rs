use serde::{Deserialize, Serialize};

use super::dataset::{DatasetHeader, Episode, OfflineDataset};
use super::{discrete_action, Environment, Step, CONNECT4_ID};
use crate::error::{Error, Result};
use crate::model::{ActionSpace, ActionValue, Actions, Trajectory};
use crate::numerics::{purpose, RngStream};

pub const ROWS: usize = 6;
pub const COLS: usize = 7;
const CELLS: usize = ROWS * COLS;

/// Board cells indexed `row * COLS + col` with row 0 at the bottom. The
/// agent's pieces are `+1`, the opponent's `-1`.
pub type Board = [i8; CELLS];

pub fn legal_columns(board: &Board) -> Vec<usize> {
    (0..COLS).filter(|&c| board[(ROWS - 1) * COLS + c] == 0).collect()
}

/// Drops a piece and returns the row it landed on.
pub fn drop_piece(board: &mut Board, col: usize, player: i8) -> Option<usize> {
    let row = (0..ROWS).find(|&r| board[r * COLS + col] == 0)?;
    board[row * COLS + col] = player;
    Some(row)
}

/// Whether the piece at `(row, col)` completes four in a row.
pub fn wins_at(board: &Board, row: usize, col: usize) -> bool {
    let player = board[row * COLS + col];
    if player == 0 {
        return false;
    }
    let count = |dr: isize, dc: isize| {
        let mut n = 0;
        let (mut r, mut c) = (row as isize + dr, col as isize + dc);
        while (0..ROWS as isize).contains(&r) && (0..COLS as isize).contains(&c) && board[r as usize * COLS + c as usize] == player {
            n += 1;
            r += dr;
            c += dc;
        }
        n
    };
    [(0, 1), (1, 0), (1, 1), (1, -1)].iter().any(|&(dr, dc)| 1 + count(dr, dc) + count(-dr, -dc) >= 4)
}

pub fn has_winner(board: &Board) -> bool {
    (0..ROWS).any(|r| (0..COLS).any(|c| wins_at(board, r, c)))
}

fn winning_column(board: &Board, player: i8) -> Option<usize> {
    legal_columns(board).into_iter().find(|&c| {
        let mut b = *board;
        let r = drop_piece(&mut b, c, player).expect("legal column");
        wins_at(&b, r, c)
    })
}

/// With probability `epsilon` a uniformly random legal column, otherwise the
/// one-ply heuristic: win if possible, else block, else random.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opponent {
    pub epsilon: f64,
}

impl Default for Opponent {
    fn default() -> Self {
        Self { epsilon: 0.5 }
    }
}

impl Opponent {
    pub fn choose(&self, board: &Board, player: i8, rng: &mut RngStream) -> usize {
        let legal = legal_columns(board);
        if !rng.bernoulli(self.epsilon) {
            if let Some(c) = winning_column(board, player).or_else(|| winning_column(board, -player)) {
                return c;
            }
        }
        legal[rng.below(legal.len())]
    }
}

#[derive(Clone, Debug)]
pub struct ConnectFour {
    opponent: Opponent,
    board: Board,
    result: Option<f64>,
}

impl Default for ConnectFour {
    fn default() -> Self {
        Self::new(Opponent::default())
    }
}

impl ConnectFour {
    pub fn new(opponent: Opponent) -> Self {
        Self { opponent, board: [0; CELLS], result: None }
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn is_over(&self) -> bool {
        self.result.is_some()
    }

    pub fn encode(board: &Board) -> Vec<f64> {
        board.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn decode(state: &[f64]) -> Option<Board> {
        if state.len() != CELLS {
            return None;
        }
        let mut b = [0; CELLS];
        for (cell, &v) in b.iter_mut().zip(state) {
            *cell = match v {
                v if v == 1.0 => 1,
                v if v == -1.0 => -1,
                v if v == 0.0 => 0,
                _ => return None,
            };
        }
        Some(b)
    }

    fn finish(&mut self, ret: f64) -> Result<Step> {
        self.result = Some(ret);
        Ok(Step { state: Self::encode(&self.board), done: true })
    }
}

impl Environment for ConnectFour {
    fn id(&self) -> &'static str {
        CONNECT4_ID
    }

    fn state_dim(&self) -> usize {
        CELLS
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: COLS }
    }

    fn horizon(&self) -> usize {
        CELLS.div_ceil(2)
    }

    fn reset(&mut self, _rng: &mut RngStream) -> Vec<f64> {
        self.board = [0; CELLS];
        self.result = None;
        Self::encode(&self.board)
    }

    fn step(&mut self, action: &ActionValue, rng: &mut RngStream) -> Result<Step> {
        if self.result.is_some() {
            return Err(Error::Env("game is over".into()));
        }
        let col = discrete_action(action, COLS)?;
        let Some(row) = drop_piece(&mut self.board, col, 1) else {
            return self.finish(-1.0);
        };
        if wins_at(&self.board, row, col) {
            return self.finish(1.0);
        }
        if legal_columns(&self.board).is_empty() {
            return self.finish(0.0);
        }
        let reply = self.opponent.choose(&self.board, -1, rng);
        let row = drop_piece(&mut self.board, reply, -1).expect("opponent plays a legal column");
        if wins_at(&self.board, row, reply) {
            return self.finish(-1.0);
        }
        if legal_columns(&self.board).is_empty() {
            return self.finish(0.0);
        }
        Ok(Step { state: Self::encode(&self.board), done: false })
    }

    fn episode_return(&self) -> f64 {
        self.result.unwrap_or(0.0)
    }
}

/// Games between a mixed heuristic/random behaviour policy (random with
/// probability `behavior_mix`) and the default opponent.
pub fn gen_connect4_dataset(n_games: usize, behavior_mix: f64, seed: u64) -> Result<OfflineDataset> {
    if n_games == 0 {
        return Err(Error::config("need at least one game"));
    }
    if !(0.0..=1.0).contains(&behavior_mix) {
        return Err(Error::config("behavior_mix must lie in [0, 1]"));
    }
    let behavior = Opponent { epsilon: behavior_mix };
    let episodes = (0..n_games)
        .map(|i| {
            let mut rng = RngStream::derive(seed, purpose::DATA, &[i as u64]);
            let mut env = ConnectFour::default();
            let mut state = env.reset(&mut rng);
            let (mut states, mut actions) = (Vec::new(), Vec::new());
            loop {
                let board = ConnectFour::decode(&state).expect("encoded board");
                let a = behavior.choose(&board, 1, &mut rng);
                states.push(state);
                actions.push(a);
                let step = env.step(&ActionValue::Discrete(a), &mut rng).expect("legal move");
                if step.done {
                    break;
                }
                state = step.state;
            }
            Episode { traj: Trajectory { states, actions: Actions::Discrete(actions) }, ret: env.episode_return() }
        })
        .collect();
    let env = ConnectFour::default();
    let header = DatasetHeader::new(
        CONNECT4_ID,
        env.state_dim(),
        env.action_space(),
        env.horizon(),
        format!("heuristic/random mixture, random share {behavior_mix}, opponent epsilon {}", env.opponent.epsilon),
        seed,
    );
    OfflineDataset::new(header, episodes)
}

/// Legality check: every stored board follows from the previous one by the
/// recorded agent move plus one legal opponent move, and no game continues
/// past a decided position.
pub fn validate_connect4_dataset(data: &OfflineDataset) -> Result<()> {
    if data.header.env_id != CONNECT4_ID || data.header.state_dim != CELLS {
        return Err(Error::validation("dataset is not a Connect Four dataset"));
    }
    for (i, ep) in data.episodes.iter().enumerate() {
        let bad = |msg: String| Error::validation(format!("game {i}: {msg}"));
        let Actions::Discrete(actions) = &ep.traj.actions else {
            return Err(bad("actions must be discrete".into()));
        };
        if ![-1.0, 0.0, 1.0].contains(&ep.ret) {
            return Err(bad(format!("return {} is not a game result", ep.ret)));
        }
        let boards: Vec<Board> = ep
            .traj
            .states
            .iter()
            .enumerate()
            .map(|(t, s)| ConnectFour::decode(s).ok_or_else(|| bad(format!("state {t} is not a board"))))
            .collect::<Result<_>>()?;
        if boards[0] != [0; CELLS] {
            return Err(bad("game does not start from the empty board".into()));
        }
        for (t, &a) in actions.iter().enumerate() {
            let mut b = boards[t];
            let row = drop_piece(&mut b, a, 1).ok_or_else(|| bad(format!("move {t} plays a full column")))?;
            let last = t + 1 == actions.len();
            if wins_at(&b, row, a) {
                if !last || ep.ret != 1.0 {
                    return Err(bad(format!("move {t} wins but the record disagrees")));
                }
                continue;
            }
            if last {
                if ep.ret == 1.0 {
                    return Err(bad("recorded win without a winning final move".into()));
                }
                continue;
            }
            let next = boards[t + 1];
            let diff: Vec<usize> = (0..CELLS).filter(|&k| b[k] != next[k]).collect();
            let [k] = diff.as_slice() else {
                return Err(bad(format!("step {t} does not add exactly one opponent piece")));
            };
            let mut check = b;
            if b[*k] != 0 || next[*k] != -1 || drop_piece(&mut check, k % COLS, -1) != Some(k / COLS) {
                return Err(bad(format!("illegal opponent move after step {t}")));
            }
            if has_winner(&next) {
                return Err(bad(format!("game continues after a win at step {t}")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connect4Audit {
    pub games: usize,
    pub wins: usize,
    pub draws: usize,
    pub losses: usize,
    pub win_rate: f64,
    pub mean_moves: f64,
}

pub fn connect4_audit(data: &OfflineDataset) -> Connect4Audit {
    let games = data.episodes.len();
    let count = |r: f64| data.episodes.iter().filter(|e| e.ret == r).count();
    Connect4Audit {
        games,
        wins: count(1.0),
        draws: count(0.0),
        losses: count(-1.0),
        win_rate: count(1.0) as f64 / games.max(1) as f64,
        mean_moves: data.episodes.iter().map(|e| e.traj.len()).sum::<usize>() as f64 / games.max(1) as f64,
    }
}
