use serde::{Deserialize, Serialize};

use super::config::ActionSpace;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-trajectory action sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Actions {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, t: usize) -> ActionValue {
        match self {
            Actions::Discrete(a) => ActionValue::Discrete(a[t]),
            Actions::Continuous(a) => ActionValue::Continuous(a[t].clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// `(s_1, a_1, ..., s_T, a_T)`. States condition the generator; only the
/// actions are scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Actions,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, state_dim: usize, space: &ActionSpace) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::validation("trajectory must have at least one step"));
        }
        if self.states.len() != self.actions.len() {
            return Err(Error::validation(format!(
                "{} states but {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        for (t, s) in self.states.iter().enumerate() {
            if s.len() != state_dim {
                return Err(Error::validation(format!("state {t} has dim {}, expected {state_dim}", s.len())));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("state {t} is not finite")));
            }
        }
        match (&self.actions, space) {
            (Actions::Discrete(a), ActionSpace::Discrete { n }) => {
                if let Some(t) = a.iter().position(|x| x >= n) {
                    return Err(Error::validation(format!("action {t} out of range for {n} choices")));
                }
            }
            (Actions::Continuous(a), ActionSpace::Continuous { dim }) => {
                if let Some(t) = a.iter().position(|x| x.len() != *dim || x.iter().any(|v| !v.is_finite())) {
                    return Err(Error::validation(format!("action {t} must be {dim} finite values")));
                }
            }
            _ => return Err(Error::validation("action kind does not match the action space")),
        }
        Ok(())
    }
}

/// Dataset-level normalisation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub return_mean: f64,
    pub return_std: f64,
}

/// Standard deviations below this are replaced by one.
pub const STD_FLOOR: f64 = 1e-8;

impl NormalizationStats {
    pub fn identity(state_dim: usize) -> Self {
        Self { state_mean: vec![0.0; state_dim], state_std: vec![1.0; state_dim], return_mean: 0.0, return_std: 1.0 }
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.state_mean).zip(&self.state_std).map(|((x, m), sd)| (x - m) / sd).collect()
    }

    pub fn normalize_return(&self, y: f64) -> f64 {
        (y - self.return_mean) / self.return_std
    }

    pub fn denormalize_return(&self, y: f64) -> f64 {
        y * self.return_std + self.return_mean
    }
}

/// Recent steps fed to the policy: `states[j]` is paired with the action
/// taken just before it (`None` at the episode start).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    pub states: Vec<Vec<f64>>,
    pub prev_actions: Vec<Option<ActionValue>>,
}

impl ContextWindow {
    /// Window ending at step `t` of `traj`, at most `len` steps long.
    pub fn from_trajectory(traj: &Trajectory, t: usize, len: usize) -> Self {
        let start = (t + 1).saturating_sub(len);
        let states = traj.states[start..=t].to_vec();
        let prev_actions = (start..=t).map(|j| (j > 0).then(|| traj.actions.get(j - 1))).collect();
        Self { states, prev_actions }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Keeps only the most recent `len` steps.
    pub fn truncate_front(&mut self, len: usize) {
        if self.states.len() > len {
            let drop = self.states.len() - len;
            self.states.drain(..drop);
            self.prev_actions.drain(..drop);
        }
    }
}

/// Action targets for the log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Discrete(Vec<usize>),
    Continuous(Tensor),
}

/// Tensors the generator consumes, built once per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTrajectory {
    /// `[T, state_dim]`, normalised.
    pub states: Tensor,
    /// `[T, action input width]`: previous action or the start marker.
    pub prev_actions: Tensor,
    pub targets: Targets,
}

impl EncodedTrajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(traj: &Trajectory, space: &ActionSpace, stats: Option<&NormalizationStats>) -> Result<Self> {
        let state_dim = traj.states.first().map_or(0, Vec::len);
        traj.validate(state_dim, space)?;
        let window = ContextWindow::from_trajectory(traj, traj.len() - 1, traj.len());
        let (states, prev_actions) = encode_inputs(&window, space, stats)?;
        let targets = match &traj.actions {
            Actions::Discrete(a) => Targets::Discrete(a.clone()),
            Actions::Continuous(a) => Targets::Continuous(Tensor::from_rows(a)?),
        };
        Ok(Self { states, prev_actions, targets })
    }
}

pub(crate) fn encode_inputs(
    window: &ContextWindow,
    space: &ActionSpace,
    stats: Option<&NormalizationStats>,
) -> Result<(Tensor, Tensor)> {
    if window.is_empty() {
        return Err(Error::validation("context window is empty"));
    }
    if window.states.len() != window.prev_actions.len() {
        return Err(Error::validation("context window states and actions differ in length"));
    }
    let rows: Vec<Vec<f64>> = match stats {
        Some(st) => window.states.iter().map(|s| st.normalize_state(s)).collect(),
        None => window.states.clone(),
    };
    let states = Tensor::from_rows(&rows)?;
    let width = space.input_width();
    let mut feats = vec![0.0; window.len() * width];
    for (j, a) in window.prev_actions.iter().enumerate() {
        let row = &mut feats[j * width..(j + 1) * width];
        match (a, space) {
            (None, _) => row[width - 1] = 1.0,
            (Some(ActionValue::Discrete(i)), ActionSpace::Discrete { n }) if i < n => row[*i] = 1.0,
            (Some(ActionValue::Continuous(v)), ActionSpace::Continuous { dim }) if v.len() == *dim => {
                row[..*dim].copy_from_slice(v)
            }
            _ => return Err(Error::validation(format!("previous action {j} does not fit the action space"))),
        }
    }
    Ok((states, Tensor::new(vec![window.len(), width], feats)?))
}
