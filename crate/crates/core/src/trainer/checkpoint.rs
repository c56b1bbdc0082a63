use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainState, TrainerConfig};
use crate::error::{Error, Result};
use crate::model::{LatentPlanModel, NormalizationStats};

pub const CHECKPOINT_FORMAT: &str = "lpt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate a model or resume its training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: LatentPlanModel,
    pub normalization: Option<NormalizationStats>,
    pub trainer: Option<TrainerConfig>,
    pub state: Option<TrainState>,
    /// Free-form provenance, e.g. the dataset's environment id.
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(model: LatentPlanModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            normalization: None,
            trainer: None,
            state: None,
            metadata: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", self.version)));
        }
        LatentPlanModel::from_parts(self.model.config.clone(), self.model.params.clone())?;
        if let Some(stats) = &self.normalization {
            if stats.state_mean.len() != self.model.config.state_dim || stats.state_std.len() != stats.state_mean.len() {
                return Err(Error::validation("normalisation stats do not match the state dimension"));
            }
        }
        if let Some(state) = &self.state {
            state.chains.validate()?;
            if state.chains.latent_dim() != self.model.latent_dim() {
                return Err(Error::validation("chain store latent dimension does not match the model"));
            }
        }
        Ok(())
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        atomic_write(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        ck.validate()?;
        Ok(ck)
    }
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
