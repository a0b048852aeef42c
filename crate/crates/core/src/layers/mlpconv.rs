use rand::Rng;

use super::{Conv, Gradients, Param};
use crate::error::Result;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct ReluCache {
    pub input: Tensor,
}

pub fn relu_forward(x: &Tensor) -> (Tensor, ReluCache) {
    (
        x.map_values(|v| v.max(0.0)),
        ReluCache { input: x.clone() },
    )
}

pub fn relu_backward(cache: &ReluCache, grad_out: &Tensor) -> Result<Tensor> {
    cache
        .input
        .zip_with(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// The two-layer ReLU MLP slid over every pixel: `1 x 1` conv, ReLU,
/// `1 x 1` conv, ReLU.
#[derive(Clone, Debug)]
pub struct MlpConv {
    pub first: Conv,
    pub second: Conv,
}

#[derive(Clone, Debug)]
pub struct MlpConvCache {
    pub input: Tensor,
    /// Pre-activation of the first layer.
    pub pre1: Tensor,
    /// Pre-activation of the second layer.
    pub pre2: Tensor,
}

impl MlpConv {
    pub fn new(in_channels: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(MlpConv {
            first: Conv::pointwise(in_channels, hidden)?,
            second: Conv::pointwise(hidden, out)?,
        })
    }

    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.first.init_he(rng);
        self.second.init_he(rng);
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mid = self.first.output_shape(input)?;
        self.second.output_shape(mid)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let a = self.first.params().into_iter().map(|(n, p)| (format!("mlp1.{n}"), p));
        let b = self.second.params().into_iter().map(|(n, p)| (format!("mlp2.{n}"), p));
        a.chain(b).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let a = self.first.params_mut().into_iter().map(|(n, p)| (format!("mlp1.{n}"), p));
        let b = self.second.params_mut().into_iter().map(|(n, p)| (format!("mlp2.{n}"), p));
        a.chain(b).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpConvCache)> {
        let pre1 = self.first.apply(x)?;
        let h = pre1.map_values(|v| v.max(0.0));
        let pre2 = self.second.apply(&h)?;
        let y = pre2.map_values(|v| v.max(0.0));
        Ok((
            y,
            MlpConvCache {
                input: x.clone(),
                pre1,
                pre2,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpConvCache, grad_out: &Tensor) -> Result<Gradients> {
        let d2 = cache
            .pre2
            .zip_with(grad_out, |p, g| if p > 0.0 { g } else { 0.0 })?;
        let h = cache.pre1.map_values(|v| v.max(0.0));
        let g2 = self.second.backward_from_input(&h, &d2)?;
        let d1 = cache
            .pre1
            .zip_with(&g2.input, |p, g| if p > 0.0 { g } else { 0.0 })?;
        let g1 = self.first.backward_from_input(&cache.input, &d1)?;
        let mut params = g1.params;
        params.extend(g2.params);
        Ok(Gradients {
            input: g1.input,
            params,
        })
    }
}
