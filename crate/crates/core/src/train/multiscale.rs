//! Random input-scale selection for multi-scale training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiScaleSpec {
    scales: Vec<(usize, usize)>,
}

impl MultiScaleSpec {
    /// Every `(h, w)` must be a multiple of 32 and at least 64.
    pub fn new(scales: Vec<(usize, usize)>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Usage("multi-scale set is empty".into()));
        }
        if let Some(&(h, w)) = scales.iter().find(|&&(h, w)| h % 32 != 0 || w % 32 != 0 || h < 64 || w < 64) {
            return Err(Error::Usage(format!("scale {h}x{w} must be a multiple of 32 and at least 64")));
        }
        Ok(MultiScaleSpec { scales })
    }

    pub fn scales(&self) -> &[(usize, usize)] {
        &self.scales
    }
}

/// Seeded stream of scale draws.
#[derive(Debug, Clone)]
pub struct MultiScaleSampler {
    spec: MultiScaleSpec,
    rng: ChaCha8Rng,
}

impl MultiScaleSampler {
    pub fn new(spec: MultiScaleSpec, seed: u64) -> Self {
        MultiScaleSampler {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> (usize, usize) {
        let i = self.rng.gen_range(0..self.spec.scales.len());
        self.spec.scales[i]
    }
}

/// First draw of the stream seeded with `seed`.
pub fn multiscale_sample(spec: &MultiScaleSpec, seed: u64) -> (usize, usize) {
    MultiScaleSampler::new(spec.clone(), seed).sample()
}
