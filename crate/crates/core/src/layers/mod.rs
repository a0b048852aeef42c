//! Forward and backward passes for every layer kind used by MIN and NIN
//! networks.
//!
//! Each layer's `forward` returns its output together with a cache; the
//! matching `backward` consumes that cache and returns the input gradient
//! plus one gradient tensor per learnable parameter, in the same order as
//! [`Layer::params`].

mod batchnorm;
mod conv;
mod dropout;
mod maxout;
mod mlpconv;
mod pool;
mod softmax;

pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPSILON, BN_MOMENTUM};
pub use conv::{Conv, ConvCache};
pub use dropout::{Dropout, DropoutCache};
pub use maxout::{Maxout, MaxoutCache, MaxoutPiece};
pub use mlpconv::{relu_backward, relu_forward, MlpConv, MlpConvCache, ReluCache};
pub use pool::{Pool, PoolCache, PoolMode, PoolSpec};
pub use softmax::{softmax, softmax_xent, SoftmaxOutput};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Whether a forward pass is part of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor and its gradient slot.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies (true for weights and biases, false for
    /// batch-norm scale and shift).
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, decay }
    }
}

/// Input gradient and per-parameter gradients from one backward call.
#[derive(Debug)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Maxout,
    Relu,
    MlpConv,
    Pool,
    Dropout,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv),
    BatchNorm(BatchNorm),
    Maxout(Maxout),
    Relu,
    MlpConv(MlpConv),
    Pool(Pool),
    Dropout(Dropout),
}

#[derive(Clone, Debug)]
pub enum Cache {
    Conv(ConvCache),
    BatchNorm(BatchNormCache),
    Maxout(MaxoutCache),
    Relu(ReluCache),
    MlpConv(MlpConvCache),
    Pool(PoolCache),
    Dropout(DropoutCache),
}

impl Cache {
    pub fn kind(&self) -> LayerKind {
        match self {
            Cache::Conv(_) => LayerKind::Conv,
            Cache::BatchNorm(_) => LayerKind::BatchNorm,
            Cache::Maxout(_) => LayerKind::Maxout,
            Cache::Relu(_) => LayerKind::Relu,
            Cache::MlpConv(_) => LayerKind::MlpConv,
            Cache::Pool(_) => LayerKind::Pool,
            Cache::Dropout(_) => LayerKind::Dropout,
        }
    }
}

fn mismatch(layer: LayerKind, cache: &Cache) -> Error {
    Error::state(format!(
        "{layer:?} backward given a {:?} cache",
        cache.kind()
    ))
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Maxout(_) => LayerKind::Maxout,
            Layer::Relu => LayerKind::Relu,
            Layer::MlpConv(_) => LayerKind::MlpConv,
            Layer::Pool(_) => LayerKind::Pool,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::Conv(c))
            }
            Layer::BatchNorm(l) => {
                let (y, c) = l.forward(x, mode)?;
                (y, Cache::BatchNorm(c))
            }
            Layer::Maxout(l) => {
                let (y, c) = l.forward(x, mode)?;
                (y, Cache::Maxout(c))
            }
            Layer::Relu => {
                let (y, c) = relu_forward(x);
                (y, Cache::Relu(c))
            }
            Layer::MlpConv(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::MlpConv(c))
            }
            Layer::Pool(l) => {
                let (y, c) = l.forward(x)?;
                (y, Cache::Pool(c))
            }
            Layer::Dropout(l) => {
                let (y, c) = l.forward(x, mode);
                (y, Cache::Dropout(c))
            }
        })
    }

    /// Evaluation-mode forward pass without a cache or any state change.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.apply(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Maxout(l) => l.infer(x),
            Layer::Relu => Ok(x.map_values(|v| v.max(0.0))),
            Layer::MlpConv(l) => Ok(l.forward(x)?.0),
            Layer::Pool(l) => Ok(l.forward(x)?.0),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    pub fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<Gradients> {
        match (self, cache) {
            (Layer::Conv(l), Cache::Conv(c)) => l.backward(c, grad_out),
            (Layer::BatchNorm(l), Cache::BatchNorm(c)) => l.backward(c, grad_out),
            (Layer::Maxout(l), Cache::Maxout(c)) => l.backward(c, grad_out),
            (Layer::Relu, Cache::Relu(c)) => Ok(Gradients {
                input: relu_backward(c, grad_out)?,
                params: Vec::new(),
            }),
            (Layer::MlpConv(l), Cache::MlpConv(c)) => l.backward(c, grad_out),
            (Layer::Pool(l), Cache::Pool(c)) => Ok(Gradients {
                input: l.backward(c, grad_out)?,
                params: Vec::new(),
            }),
            (Layer::Dropout(l), Cache::Dropout(c)) => Ok(Gradients {
                input: l.backward(c, grad_out)?,
                params: Vec::new(),
            }),
            (layer, cache) => Err(mismatch(layer.kind(), cache)),
        }
    }

    /// Output shape for a given input shape, validating compatibility.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::BatchNorm(l) => {
                l.check_channels(input[1])?;
                Ok(input)
            }
            Layer::Maxout(l) => l.output_shape(input),
            Layer::Relu | Layer::Dropout(_) => Ok(input),
            Layer::MlpConv(l) => l.output_shape(input),
            Layer::Pool(l) => l.spec.output_shape(input),
        }
    }

    /// Learnable parameters with their local names, in gradient order.
    pub fn params(&self) -> Vec<(String, &Param)> {
        match self {
            Layer::Conv(l) => l.params().into_iter().map(|(n, p)| (n.to_string(), p)).collect(),
            Layer::BatchNorm(l) => l.params().into_iter().map(|(n, p)| (n.to_string(), p)).collect(),
            Layer::Maxout(l) => l.params(),
            Layer::MlpConv(l) => l.params(),
            Layer::Relu | Layer::Pool(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Layer::Conv(l) => l
                .params_mut()
                .into_iter()
                .map(|(n, p)| (n.to_string(), p))
                .collect(),
            Layer::BatchNorm(l) => l
                .params_mut()
                .into_iter()
                .map(|(n, p)| (n.to_string(), p))
                .collect(),
            Layer::Maxout(l) => l.params_mut(),
            Layer::MlpConv(l) => l.params_mut(),
            Layer::Relu | Layer::Pool(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    /// Batch-norm states owned by this layer, in a stable order.
    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        match self {
            Layer::BatchNorm(bn) => vec![bn],
            Layer::Maxout(m) => m.pieces.iter().map(|p| &p.bn).collect(),
            _ => Vec::new(),
        }
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match self {
            Layer::BatchNorm(bn) => vec![bn],
            Layer::Maxout(m) => m.pieces.iter_mut().map(|p| &mut p.bn).collect(),
            _ => Vec::new(),
        }
    }
}
