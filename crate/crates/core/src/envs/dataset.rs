//! Offline datasets and their JSONL file format.
//!
//! The first line is a [`DatasetHeader`]; every following line is one
//! record `{"states": [[...], ...], "actions": [...], "return": y}`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LINGAUSS_ID;
use crate::error::{Error, Result};
use crate::model::{ActionSpace, Actions, EncodedTrajectory, NormalizationStats, Trajectory, STD_FLOOR};
use crate::numerics::{purpose, RngStream};
use crate::sampler::LinearGaussianSpec;
use crate::trainer::checkpoint::atomic_write;
use crate::trainer::TrainingExample;

pub const DATASET_FORMAT: &str = "lpt-dataset";
pub const DATASET_VERSION: u32 = 1;
const STATS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub env_id: String,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    /// Human-readable description of the behaviour policy.
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub stats: NormalizationStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl DatasetHeader {
    /// Header with placeholder `n` and stats; [`OfflineDataset::new`] fills them in.
    pub fn new(
        env_id: &str,
        state_dim: usize,
        action_space: ActionSpace,
        horizon: usize,
        generator: String,
        seed: u64,
    ) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            env_id: env_id.into(),
            state_dim,
            action_space,
            horizon,
            generator,
            seed,
            n: 0,
            stats: NormalizationStats::identity(state_dim),
            extra: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub traj: Trajectory,
    pub ret: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    states: Vec<Vec<f64>>,
    actions: Actions,
    #[serde(rename = "return")]
    ret: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
}

/// Population mean and standard deviation over every state and return.
pub fn compute_stats(episodes: &[Episode], state_dim: usize) -> NormalizationStats {
    let floor = |sd: f64| if sd < STD_FLOOR { 1.0 } else { sd };
    let mut sum = vec![0.0; state_dim];
    let mut count = 0usize;
    for s in episodes.iter().flat_map(|e| &e.traj.states) {
        sum.iter_mut().zip(s).for_each(|(a, v)| *a += v);
        count += 1;
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / count.max(1) as f64).collect();
    let mut sq = vec![0.0; state_dim];
    for s in episodes.iter().flat_map(|e| &e.traj.states) {
        sq.iter_mut().zip(s).zip(&mean).for_each(|((a, v), m)| *a += (v - m) * (v - m));
    }
    let state_std = sq.iter().map(|v| floor((v / count.max(1) as f64).sqrt())).collect();
    let n = episodes.len().max(1) as f64;
    let return_mean = episodes.iter().map(|e| e.ret).sum::<f64>() / n;
    let return_var = episodes.iter().map(|e| (e.ret - return_mean).powi(2)).sum::<f64>() / n;
    NormalizationStats { state_mean: mean, state_std, return_mean, return_std: floor(return_var.sqrt()) }
}

fn stats_close(a: &NormalizationStats, b: &NormalizationStats) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= STATS_TOLERANCE * (1.0 + y.abs());
    let all = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| close(*p, *q));
    all(&a.state_mean, &b.state_mean)
        && all(&a.state_std, &b.state_std)
        && close(a.return_mean, b.return_mean)
        && close(a.return_std, b.return_std)
}

impl OfflineDataset {
    /// Fills in the count and statistics, then validates.
    pub fn new(mut header: DatasetHeader, episodes: Vec<Episode>) -> Result<Self> {
        header.n = episodes.len();
        header.stats = compute_stats(&episodes, header.state_dim);
        let data = Self { header, episodes };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.header.stats
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ret).collect()
    }

    pub fn max_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.ret).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
            return Err(Error::validation(format!("unsupported dataset format {} v{}", h.format, h.version)));
        }
        if self.episodes.is_empty() {
            return Err(Error::validation("dataset is empty"));
        }
        if h.n != self.episodes.len() {
            return Err(Error::validation(format!("header says {} records, found {}", h.n, self.episodes.len())));
        }
        for (i, e) in self.episodes.iter().enumerate() {
            e.traj.validate(h.state_dim, &h.action_space).map_err(|err| Error::validation(format!("record {i}: {err}")))?;
            if e.traj.len() > h.horizon {
                return Err(Error::validation(format!("record {i} is longer than the horizon {}", h.horizon)));
            }
            if !e.ret.is_finite() {
                return Err(Error::validation(format!("record {i} has a non-finite return")));
            }
        }
        if !stats_close(&h.stats, &compute_stats(&self.episodes, h.state_dim)) {
            return Err(Error::validation("header statistics do not match the records"));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.episodes {
            let rec = Record { states: e.traj.states.clone(), actions: e.traj.actions.clone(), ret: e.ret };
            writeln!(out, "{}", serde_json::to_string(&rec)?).expect("writing to a string");
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let parse = |line: usize, err: serde_json::Error| Error::Parse { line, message: err.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let (hl, first) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let header: DatasetHeader = serde_json::from_str(first).map_err(|e| parse(hl, e))?;
        let mut episodes = Vec::with_capacity(header.n);
        let mut last_line = hl;
        for (ln, line) in lines {
            let rec: Record = serde_json::from_str(line).map_err(|e| parse(ln, e))?;
            episodes.push(Episode { traj: Trajectory { states: rec.states, actions: rec.actions }, ret: rec.ret });
            last_line = ln;
        }
        if episodes.len() != header.n {
            return Err(Error::Parse {
                line: last_line + 1,
                message: format!("expected {} records, found {}", header.n, episodes.len()),
            });
        }
        let data = Self { header, episodes };
        data.validate()?;
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Encoded trajectories with normalised states and returns.
    pub fn training_examples(&self) -> Result<Vec<TrainingExample>> {
        let stats = &self.header.stats;
        self.episodes
            .iter()
            .map(|e| {
                Ok(TrainingExample {
                    traj: EncodedTrajectory::encode(&e.traj, &self.header.action_space, Some(stats))?,
                    y: stats.normalize_return(e.ret),
                })
            })
            .collect()
    }
}

/// Samples from the linear-Gaussian model described by `spec` with
/// constant placeholder states.
pub fn gen_linear_gaussian_dataset(spec: &LinearGaussianSpec, n: usize, horizon: usize, seed: u64) -> Result<OfflineDataset> {
    spec.validate()?;
    if n == 0 || horizon == 0 {
        return Err(Error::config("linear-Gaussian dataset needs n >= 1 and horizon >= 1"));
    }
    let episodes = (0..n)
        .map(|i| {
            let mut rng = RngStream::derive(seed, purpose::DATA, &[i as u64]);
            let (traj, ret) = spec.sample(horizon, &mut rng);
            Episode { traj, ret }
        })
        .collect();
    let mut header = DatasetHeader::new(
        LINGAUSS_ID,
        1,
        ActionSpace::Continuous { dim: spec.action_dim },
        horizon,
        "linear-Gaussian ancestral sampling".into(),
        seed,
    );
    header.extra = Some(serde_json::to_value(spec)?);
    OfflineDataset::new(header, episodes)
}
