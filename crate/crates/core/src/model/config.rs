use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Continuous { dim: usize },
    Discrete { n: usize },
}

impl ActionSpace {
    /// Width of the previous-action input feature (one extra slot marks the
    /// episode start).
    pub fn input_width(&self) -> usize {
        match self {
            ActionSpace::Continuous { dim } => dim + 1,
            ActionSpace::Discrete { n } => n + 1,
        }
    }

    /// Width of the action head output (mean or logits).
    pub fn head_width(&self) -> usize {
        match self {
            ActionSpace::Continuous { dim } => *dim,
            ActionSpace::Discrete { n } => *n,
        }
    }
}

/// Prior transform `z = U(z0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    Identity,
    /// 1-D conv UNet over `z0` reshaped to `[d / channels, channels]`, with a
    /// residual connection and a zero-initialised output convolution.
    Unet { channels: usize, base_width: usize, multipliers: Vec<usize>, res_blocks: usize },
    /// Residual MLP with zero-initialised block outputs.
    ResMlp { hidden: usize, blocks: usize },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Unet { channels: 2, base_width: 16, multipliers: vec![1, 2], res_blocks: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    /// Causal transformer with cross-attention to the plan after every
    /// self-attention block. `context` is the total receptive field in steps.
    Transformer { hidden: usize, layers: usize, heads: usize, context: usize, z_tokens: usize },
    /// Context-free linear head `W z + c`, used by the conjugate test fixture.
    Linear,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Transformer { hidden: 32, layers: 2, heads: 1, context: 16, z_tokens: 1 }
    }
}

impl GeneratorConfig {
    /// Steps of history an action may depend on.
    pub fn context(&self) -> usize {
        match self {
            GeneratorConfig::Transformer { context, .. } => *context,
            GeneratorConfig::Linear => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnConfig {
    Mlp { hidden: usize },
    Linear,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        ReturnConfig::Mlp { hidden: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub returns: ReturnConfig,
    /// Observation variance of the return predictor (a fixed hyperparameter).
    pub return_variance: f64,
}

impl ModelConfig {
    pub fn new(state_dim: usize, action_space: ActionSpace) -> Self {
        Self {
            latent_dim: 16,
            state_dim,
            action_space,
            prior: PriorConfig::default(),
            generator: GeneratorConfig::default(),
            returns: ReturnConfig::default(),
            return_variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim;
        if d == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        if self.state_dim == 0 {
            return Err(Error::config("state_dim must be positive"));
        }
        if self.action_space.head_width() == 0 {
            return Err(Error::config("action space must be non-empty"));
        }
        if !(self.return_variance > 0.0 && self.return_variance.is_finite()) {
            return Err(Error::config("return_variance must be positive"));
        }
        match &self.prior {
            PriorConfig::Identity => {}
            PriorConfig::Unet { channels, base_width, multipliers, res_blocks } => {
                if *channels == 0 || !d.is_multiple_of(*channels) {
                    return Err(Error::config(format!("UNet channels {channels} must divide latent_dim {d}")));
                }
                if *base_width == 0 || multipliers.is_empty() || multipliers.contains(&0) || *res_blocks == 0 {
                    return Err(Error::config("UNet needs positive width, multipliers and res_blocks"));
                }
                let len = d / channels;
                let factor = 1usize << (multipliers.len() - 1);
                if !len.is_multiple_of(factor) {
                    return Err(Error::config(format!(
                        "UNet length {len} not divisible by 2^{} (one halving per extra stage)",
                        multipliers.len() - 1
                    )));
                }
            }
            PriorConfig::ResMlp { hidden, blocks } => {
                if *hidden == 0 || *blocks == 0 {
                    return Err(Error::config("ResMlp needs positive hidden and blocks"));
                }
            }
        }
        validate_generator(&self.generator, d)?;
        if let ReturnConfig::Mlp { hidden } = self.returns {
            if hidden == 0 {
                return Err(Error::config("return MLP hidden width must be positive"));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_generator(cfg: &GeneratorConfig, latent_dim: usize) -> Result<()> {
    if let GeneratorConfig::Transformer { hidden, layers, heads, context, z_tokens } = cfg {
        if *hidden == 0 || *layers == 0 || *heads == 0 || *context == 0 || *z_tokens == 0 {
            return Err(Error::config("transformer sizes must be positive"));
        }
        if hidden % heads != 0 {
            return Err(Error::config(format!("hidden {hidden} not divisible by heads {heads}")));
        }
        if !latent_dim.is_multiple_of(*z_tokens) {
            return Err(Error::config(format!("z_tokens {z_tokens} must divide latent_dim {latent_dim}")));
        }
    }
    Ok(())
}
