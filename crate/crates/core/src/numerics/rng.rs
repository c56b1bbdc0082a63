use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;
use crate::error::{Error, Result};

/// Purpose tags mixed into derived stream ids so that, e.g., the posterior
/// chain of example 3 never shares a stream with rollout episode 3.
pub mod purpose {
    pub const INIT: u64 = 0x1001;
    pub const CHAIN_INIT: u64 = 0x1002;
    pub const POSTERIOR: u64 = 0x1003;
    pub const PLAN: u64 = 0x1004;
    pub const ROLLOUT: u64 = 0x1005;
    pub const ENV: u64 = 0x1006;
    pub const SHUFFLE: u64 = 0x1007;
    pub const DATA: u64 = 0x1008;
    pub const ORACLE: u64 = 0x1009;
    pub const FIXTURE: u64 = 0x100a;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a purpose tag and key path into a stream id.
pub fn stream_id(purpose: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(purpose), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A seeded random stream. Equal `(master_seed, stream_id)` pairs replay the
/// same sequence; distinct stream ids select independent ChaCha streams.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng }
    }

    /// Stream for a `(purpose, keys...)` pair under `master_seed`.
    pub fn derive(master_seed: u64, purpose: u64, keys: &[u64]) -> Self {
        Self::new(master_seed, stream_id(purpose, keys))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    /// Index drawn from unnormalised non-negative weights.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let mut u = self.uniform() * total;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                return i;
            }
            u -= p;
        }
        probs.len() - 1
    }
}

/// Tensor of i.i.d. standard normal entries.
pub fn gaussian_sample(shape: &[usize], rng: &mut RngStream) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!("gaussian_sample needs a non-empty shape, got {shape:?}")));
    }
    let n = shape.iter().product();
    Ok(Tensor::from_parts(shape.to_vec(), rng.normal_vec(n)))
}
