//! Sequential networks: forward and backward passes over a named layer
//! list, a parameter registry, and prediction.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::layers::{softmax_xent, BatchNorm, Cache, Layer, Mode, Param};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

impl NamedLayer {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        NamedLayer {
            name: name.into(),
            layer,
        }
    }
}

/// Ordered layer stack mapping `(N, C, H, W)` images to `(N, classes, 1, 1)`
/// logits.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<NamedLayer>,
    input: [usize; 3],
    classes: usize,
    /// Bumped whenever parameters change; traces from older versions are stale.
    version: u64,
}

/// Per-layer caches from a training-mode forward pass.
#[derive(Debug)]
pub struct Trace {
    caches: Vec<Cache>,
    version: u64,
    batch: usize,
}

impl Trace {
    pub fn caches(&self) -> &[Cache] {
        &self.caches
    }
}

/// Loss and error count from one training step.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub errors: usize,
}

impl Network {
    /// Checks that adjacent layers agree on shape, that the stack ends in
    /// `(classes, 1, 1)`, and that layer names are unique.
    pub fn new(input: [usize; 3], classes: usize, layers: Vec<NamedLayer>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut shape = [1, input[0], input[1], input[2]];
        for l in &layers {
            if !seen.insert(l.name.clone()) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", l.name)));
            }
            shape = l
                .layer
                .output_shape(shape)
                .map_err(|e| Error::invalid(format!("layer `{}`: {e}", l.name)))?;
        }
        if shape != [1, classes, 1, 1] {
            return Err(Error::invalid(format!(
                "network output {:?} is not ({classes}, 1, 1)",
                &shape[1..]
            )));
        }
        Ok(Network {
            layers,
            input,
            classes,
            version: 0,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [NamedLayer] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Activation shape after each layer for a batch of one.
    pub fn layer_shapes(&self) -> Vec<(String, [usize; 4])> {
        let mut shape = [1, self.input[0], self.input[1], self.input[2]];
        self.layers
            .iter()
            .map(|l| {
                shape = l.layer.output_shape(shape).expect("validated at construction");
                (l.name.clone(), shape)
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [_, c, h, w] = batch.shape();
        if [c, h, w] != self.input {
            return Err(Error::invalid(format!(
                "batch samples are {:?}, network expects {:?}",
                [c, h, w],
                self.input
            )));
        }
        Ok(())
    }

    /// Runs the whole stack. Training mode returns a trace for `backward`;
    /// evaluation mode returns none and changes no state.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, Option<Trace>)> {
        self.check_batch(batch)?;
        if mode == Mode::Eval {
            return Ok((self.infer(batch)?, None));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for l in &mut self.layers {
            let (y, cache) = l
                .layer
                .forward(&x, mode)
                .map_err(|e| annotate(&l.name, e))?;
            caches.push(cache);
            x = y;
        }
        Ok((
            x,
            Some(Trace {
                caches,
                version: self.version,
                batch: batch.batch(),
            }),
        ))
    }

    /// Evaluation-mode logits.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for l in &self.layers {
            x = l.layer.infer(&x).map_err(|e| annotate(&l.name, e))?;
        }
        Ok(x)
    }

    /// Evaluation-mode output of every layer, in order.
    pub fn activations(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let mut out: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let x = out.last().unwrap_or(batch);
            let y = l.layer.infer(x).map_err(|e| annotate(&l.name, e))?;
            out.push(y);
        }
        Ok(out)
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. the logits) and stores
    /// each parameter's gradient in its slot, replacing previous values.
    pub fn backward(&mut self, trace: &Trace, loss_grad: &Tensor) -> Result<()> {
        if trace.version != self.version {
            return Err(Error::state("trace is stale: parameters changed since the forward pass"));
        }
        if trace.caches.len() != self.layers.len() {
            return Err(Error::state("trace does not belong to this network"));
        }
        loss_grad.expect_shape([trace.batch, self.classes, 1, 1], "loss gradient")?;
        let mut grad = loss_grad.clone();
        for (l, cache) in self.layers.iter_mut().zip(&trace.caches).rev() {
            let g = l
                .layer
                .backward(cache, &grad)
                .map_err(|e| annotate(&l.name, e))?;
            for ((_, p), pg) in l.layer.params_mut().into_iter().zip(g.params) {
                p.grad = pg;
            }
            grad = g.input;
        }
        Ok(())
    }

    /// Forward, softmax cross-entropy and backward on one labelled batch.
    pub fn train_step(&mut self, batch: &Tensor, labels: &[usize]) -> Result<StepStats> {
        let (logits, trace) = self.forward(batch, Mode::Train)?;
        let out = softmax_xent(&logits, labels)?;
        self.backward(&trace.expect("training trace"), &out.grad)?;
        let errors = argmax_rows(&logits)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p != l)
            .count();
        Ok(StepStats {
            loss: out.loss,
            errors,
        })
    }

    /// Evaluation-mode class predictions; ties go to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(batch)?))
    }

    /// Every learnable parameter under its qualified name (`layer.param`).
    pub fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.layer
                    .params()
                    .into_iter()
                    .map(move |(n, p)| (format!("{}.{n}", l.name), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let name = l.name.clone();
                l.layer
                    .params_mut()
                    .into_iter()
                    .map(move |(n, p)| (format!("{name}.{n}"), p))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Records that parameter values changed, invalidating outstanding traces.
    pub fn mark_updated(&mut self) {
        self.version += 1;
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.layers.iter().flat_map(|l| l.layer.batch_norms()).collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.layer.batch_norms_mut())
            .collect()
    }

    /// Makes training-mode passes use running statistics instead of batch
    /// moments.
    pub fn freeze_batch_norms(&mut self, frozen: bool) {
        for bn in self.batch_norms_mut() {
            bn.frozen = frozen;
        }
    }

    /// Reseeds every dropout layer; layer `i` gets `seed + i`.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Layer::Dropout(d) = &mut l.layer {
                d.reseed(seed.wrapping_add(i as u64));
            }
        }
    }
}

fn annotate(layer: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("layer `{layer}`: {m}")),
        Error::InvalidState(m) => Error::InvalidState(format!("layer `{layer}`: {m}")),
        Error::Uninitialized(m) => Error::Uninitialized(format!("layer `{layer}`: {m}")),
        other => other,
    }
}

/// Index of the largest value in each row; the first wins a tie.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.sample_len();
    logits
        .data()
        .chunks_exact(classes.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_largest_and_breaks_ties_low() {
        let t = Tensor::from_vec([3, 2, 1, 1], vec![0.1, 0.9, 0.5, 0.5, 2.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0, 0]);
    }
}
