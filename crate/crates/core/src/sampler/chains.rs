use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, purpose, RngStream, Tensor};

/// Persistent chain state per training example. Each example draws its first
/// state from its own stream, so the value does not depend on access order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStore {
    master_seed: u64,
    latent_dim: usize,
    states: Vec<Option<Vec<f64>>>,
}

impl ChainStore {
    pub fn new(n: usize, latent_dim: usize, master_seed: u64) -> Self {
        Self { master_seed, latent_dim, states: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Number of examples whose chain has been started.
    pub fn touched(&self) -> usize {
        self.states.iter().filter(|s| s.is_some()).count()
    }

    fn check(&self, idx: usize) -> Result<()> {
        if idx >= self.states.len() {
            return Err(Error::IndexOutOfRange { index: idx, len: self.states.len() });
        }
        Ok(())
    }

    /// Current state of chain `idx`, drawing and recording `N(0, I)` on first
    /// access.
    pub fn get_init(&mut self, idx: usize) -> Result<Tensor> {
        self.check(idx)?;
        if self.states[idx].is_none() {
            let mut rng = RngStream::derive(self.master_seed, purpose::CHAIN_INIT, &[idx as u64]);
            let z = gaussian_sample(&[self.latent_dim], &mut rng)?;
            self.states[idx] = Some(z.into_data());
        }
        Ok(Tensor::vector(self.states[idx].clone().expect("initialised above")))
    }

    pub fn update(&mut self, idx: usize, z0: &Tensor) -> Result<()> {
        self.check(idx)?;
        if z0.len() != self.latent_dim {
            return Err(Error::shape(format!("chain state has {} values, expected {}", z0.len(), self.latent_dim)));
        }
        if !z0.is_finite() {
            return Err(Error::NonFinite("chain state".into()));
        }
        self.states[idx] = Some(z0.data().to_vec());
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.states.iter().flatten() {
            if s.len() != self.latent_dim || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("chain store holds an invalid state"));
            }
        }
        Ok(())
    }
}
