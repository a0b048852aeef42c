use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: in training each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; evaluation is the
/// identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct DropoutCache {
    /// Per-unit multiplier: `0` or `1 / (1 - rate)`.
    pub mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Dropout {
            rate,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Restarts the mask stream from the configured seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, DropoutCache) {
        if mode == Mode::Eval || self.rate == 0.0 {
            let mask = vec![1.0; x.len()];
            return (x.clone(), DropoutCache { mask });
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let y = self.apply_mask(x, &mask);
        (y, DropoutCache { mask })
    }

    /// Applies a previously drawn mask.
    pub fn apply_mask(&self, x: &Tensor, mask: &[f64]) -> Tensor {
        let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
        Tensor::from_vec(x.shape(), data).expect("mask matches input length")
    }

    pub fn backward(&self, cache: &DropoutCache, grad_out: &Tensor) -> Result<Tensor> {
        if cache.mask.len() != grad_out.len() {
            return Err(Error::state("dropout mask does not match gradient"));
        }
        Ok(self.apply_mask(grad_out, &cache.mask))
    }
}
