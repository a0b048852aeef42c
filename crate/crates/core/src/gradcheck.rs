//! Central finite-difference gradient checks for layers.
//!
//! A layer is checked through the scalar probe `L(x) = sum(y(x) * r)` for a
//! fixed random tensor `r`: the analytic gradient is `backward(r)` and the
//! numeric one is `(L(x + h) - L(x - h)) / 2h`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::tensor::{Shape, Tensor};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Entries per tensor checked; larger tensors are subsampled.
const MAX_ENTRIES: usize = 60;

/// Magnitude below which values are compared absolutely.
const FLOOR: f64 = 1e-5;

pub fn random_tensor<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// `|a - b| / max(|a|, |b|, 1e-5)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn probe(layer: &mut Layer, x: &Tensor, r: &Tensor) -> Result<f64> {
    let (y, _) = layer.forward(x, Mode::Train)?;
    Ok(y.dot(r))
}

fn indices<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    if len <= MAX_ENTRIES {
        (0..len).collect()
    } else {
        sample(rng, len, MAX_ENTRIES).into_vec()
    }
}

/// Largest relative error between analytic and numeric input gradients.
pub fn check_layer_input<R: Rng + ?Sized>(layer: &mut Layer, x: &Tensor, rng: &mut R) -> Result<f64> {
    let (y, cache) = layer.forward(x, Mode::Train)?;
    let r = random_tensor(y.shape(), rng);
    let analytic = layer.backward(&cache, &r)?.input;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in indices(x.len(), rng) {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let plus = probe(layer, &xp, &r)?;
        xp.data_mut()[i] = orig - STEP;
        let minus = probe(layer, &xp, &r)?;
        xp.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Largest relative error over every learnable parameter of the layer.
pub fn check_layer_params<R: Rng + ?Sized>(layer: &mut Layer, x: &Tensor, rng: &mut R) -> Result<f64> {
    let (y, cache) = layer.forward(x, Mode::Train)?;
    let r = random_tensor(y.shape(), rng);
    let analytic = layer.backward(&cache, &r)?.params;
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        for i in indices(grad.len(), rng) {
            let orig = layer.params_mut()[p].1.value.data()[i];
            layer.params_mut()[p].1.value.data_mut()[i] = orig + STEP;
            let plus = probe(layer, x, &r)?;
            layer.params_mut()[p].1.value.data_mut()[i] = orig - STEP;
            let minus = probe(layer, x, &r)?;
            layer.params_mut()[p].1.value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}
