use super::{Gradients, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization with learnable scale `gamma` and shift
/// `beta`.
///
/// Training normalizes with the batch's own moments and folds them into the
/// running estimates; evaluation normalizes with the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    /// Number of running-statistic updates so far.
    pub updates: u64,
    /// When set, training-mode passes also use (and keep) the running
    /// statistics.
    pub frozen: bool,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    /// Whether the batch moments were used (and so depend on the input).
    pub batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::filled([1, channels, 1, 1], 1.0), false),
            beta: Param::new(Tensor::zeros([1, channels, 1, 1]), false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            updates: 0,
            frozen: false,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("batch-norm epsilon must be positive"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Installs running statistics directly, marking the state initialized.
    pub fn set_running(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(Error::invalid("running statistics length differs from channel count"));
        }
        if var.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::invalid("running variance must be non-negative"));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.updates = self.updates.max(1);
        Ok(())
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b;
        }
        self.updates += 1;
    }

    pub(crate) fn require_running(&self) -> Result<()> {
        if self.updates == 0 {
            return Err(Error::Uninitialized(
                "batch norm evaluated before any running-statistic update".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.channels() {
            return Err(Error::invalid(format!(
                "batch norm over {} channels given {c}",
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let [n, c, _, _] = x.shape();
        self.check_channels(c)?;
        let use_batch = mode == Mode::Train && !self.frozen;
        let (mean, var) = if use_batch {
            if n * x.plane() < 2 {
                return Err(Error::invalid(
                    "training-mode batch norm needs at least two values per channel",
                ));
            }
            let (mean, var) = x.channel_moments()?;
            self.update_running(&mean, &var);
            (mean, var)
        } else {
            self.require_running()?;
            (self.running_mean.clone(), self.running_var.clone())
        };

        let (y, x_hat, inv_std) = self.normalize(x, &mean, &var);
        Ok((
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                batch_stats: use_batch,
            },
        ))
    }

    /// Evaluation-mode pass with the running statistics; leaves state untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_channels(x.channels())?;
        self.require_running()?;
        Ok(self.normalize(x, &self.running_mean, &self.running_var).0)
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> (Tensor, Tensor, Vec<f64>) {
        let [n, c, _, _] = x.shape();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let plane = x.plane();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let src = &x.data()[off..off + plane];
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (g, b) = (gamma[ch], beta[ch]);
                let xh = &mut x_hat.data_mut()[off..off + plane];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - mu) * is;
                }
                for (o, &h) in y.data_mut()[off..off + plane].iter_mut().zip(xh.iter()) {
                    *o = g * h + b;
                }
            }
        }
        (y, x_hat, inv_std)
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<Gradients> {
        grad_out.expect_shape(cache.x_hat.shape(), "batch norm backward")?;
        let [n, c, _, _] = grad_out.shape();
        self.check_channels(c)?;
        let plane = grad_out.plane();
        let count = (n * plane) as f64;
        let gamma = self.gamma.value.data();

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.x_hat.data()[off..off + plane];
                dbeta[ch] += dy.iter().sum::<f64>();
                dgamma[ch] += dy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
        }

        let mut dx = Tensor::zeros(grad_out.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.x_hat.data()[off..off + plane];
                let scale = gamma[ch] * cache.inv_std[ch];
                let out = &mut dx.data_mut()[off..off + plane];
                if cache.batch_stats {
                    let (sb, sg) = (dbeta[ch] / count, dgamma[ch] / count);
                    for ((o, &g), &h) in out.iter_mut().zip(dy).zip(xh) {
                        *o = scale * (g - sb - h * sg);
                    }
                } else {
                    for (o, &g) in out.iter_mut().zip(dy) {
                        *o = scale * g;
                    }
                }
            }
        }

        Ok(Gradients {
            input: dx,
            params: vec![
                Tensor::from_vec([1, c, 1, 1], dgamma)?,
                Tensor::from_vec([1, c, 1, 1], dbeta)?,
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_layer_input, check_layer_params, random_tensor};
    use crate::layers::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standardizes_one_two_three() {
        let mut bn = BatchNorm::new(1).with_epsilon(1e-14).unwrap();
        let x = Tensor::from_vec([3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        // (x - 2) / sqrt(2/3)
        let expected = [-1.5f64.sqrt(), 0.0, 1.5f64.sqrt()];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((y.data()[2] - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn constant_channel_yields_beta() {
        let mut bn = BatchNorm::new(1);
        bn.beta.value.fill(5.0);
        let (y, _) = bn.forward(&Tensor::filled([2, 1, 2, 2], 3.0), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn scale_and_shift() {
        let mut bn = BatchNorm::new(1).with_epsilon(1e-14).unwrap();
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(1.0);
        // unit running statistics make x_hat equal the input
        bn.set_running(vec![0.0], vec![1.0]).unwrap();
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip([-1.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_before_update_is_an_error() {
        let mut bn = BatchNorm::new(2);
        let r = bn.forward(&Tensor::zeros([1, 2, 2, 2]), Mode::Eval);
        assert!(matches!(r, Err(Error::Uninitialized(_))));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.1 * 2.0).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        let expected = (1.0 - 0.2) / (1.0f64 + BN_EPSILON).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert_eq!(bn.updates, 1);
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bn = BatchNorm::new(3);
        let x = random_tensor([4, 3, 4, 4], &mut rng).map_values(|v| 3.0 * v + 7.0);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let (m, v) = y.channel_moments().unwrap();
        for c in 0..3 {
            assert!(m[c].abs() < 1e-6);
            assert!((v[c] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(4);
        bn.gamma.value = random_tensor([1, 4, 1, 1], &mut rng);
        bn.beta.value = random_tensor([1, 4, 1, 1], &mut rng);
        let x = random_tensor([2, 4, 6, 6], &mut rng);
        let mut layer = Layer::BatchNorm(bn);
        assert!(check_layer_input(&mut layer, &x, &mut rng).unwrap() < 1e-4);
        assert!(check_layer_params(&mut layer, &x, &mut rng).unwrap() < 1e-4);
    }

    #[test]
    fn frozen_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut bn = BatchNorm::new(2);
        bn.set_running(vec![0.3, -0.2], vec![1.5, 0.7]).unwrap();
        bn.frozen = true;
        let x = random_tensor([2, 2, 3, 3], &mut rng);
        let mut layer = Layer::BatchNorm(bn);
        assert!(check_layer_input(&mut layer, &x, &mut rng).unwrap() < 1e-4);
    }
}
