use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

/// Linear convolution `y(i,j,n) = w_n . patch(i,j) + b_n` with no
/// activation, computed by im2col and a matrix product.
#[derive(Clone, Debug)]
pub struct Conv {
    /// `(units, in_channels, kh, kw)`
    pub weight: Param,
    /// `(1, units, 1, 1)`
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    pub input: Tensor,
}

impl Conv {
    /// Zero-initialized convolution.
    pub fn new(
        in_channels: usize,
        units: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if in_channels == 0 || units == 0 || kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "conv needs positive sizes, got in={in_channels} units={units} kernel={kh}x{kw} stride={stride}"
            )));
        }
        Ok(Conv {
            weight: Param::new(Tensor::zeros([units, in_channels, kh, kw]), true),
            bias: Param::new(Tensor::zeros([1, units, 1, 1]), true),
            stride,
            pad,
        })
    }

    /// `1 x 1` convolution with stride 1 and no padding.
    pub fn pointwise(in_channels: usize, units: usize) -> Result<Self> {
        Conv::new(in_channels, units, 1, 1, 1, 0)
    }

    pub fn from_params(weight: Tensor, bias: Vec<f64>, stride: usize, pad: usize) -> Result<Self> {
        let [units, cin, kh, kw] = weight.shape();
        let mut conv = Conv::new(cin, units, kh, kw, stride, pad)?;
        if !weight.all_finite() {
            return Err(Error::invalid("conv weights must be finite"));
        }
        conv.weight.value = weight;
        conv.bias.value = Tensor::from_vec([1, units, 1, 1], bias)?;
        Ok(conv)
    }

    /// He initialization: zero-mean Gaussian weights with standard deviation
    /// `sqrt(2 / fan_in)`, zero biases.
    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive standard deviation");
        for w in self.weight.value.data_mut() {
            *w = normal.sample(rng);
        }
        self.bias.value.fill(0.0);
    }

    pub fn units(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[2], s[3])
    }

    pub fn fan_in(&self) -> usize {
        let [_, c, kh, kw] = self.weight.value.shape();
        c * kh * kw
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == (1, 1) && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, c, h, w] = input;
        if c != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < kh || pw < kw {
            return Err(Error::invalid(format!(
                "conv kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok([
            n,
            self.units(),
            (ph - kh) / self.stride + 1,
            (pw - kw) / self.stride + 1,
        ])
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    /// Unrolls the patches of one sample into a `(C*kh*kw) x (Ho*Wo)` matrix.
    fn im2col(&self, sample: &[f64], in_hw: (usize, usize), out_hw: (usize, usize), cols: &mut [f64]) {
        let (h, w) = in_hw;
        let (ho, wo) = out_hw;
        let (kh, kw) = self.kernel();
        let cin = self.in_channels();
        let (s, pad) = (self.stride as isize, self.pad as isize);
        let p = ho * wo;
        for c in 0..cin {
            let plane = &sample[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((c * kh + ki) * kw + kj) * p;
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - pad;
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - pad;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back onto one sample's input gradient.
    fn col2im(&self, cols: &[f64], in_hw: (usize, usize), out_hw: (usize, usize), grad: &mut [f64]) {
        let (h, w) = in_hw;
        let (ho, wo) = out_hw;
        let (kh, kw) = self.kernel();
        let cin = self.in_channels();
        let (s, pad) = (self.stride as isize, self.pad as isize);
        let p = ho * wo;
        for c in 0..cin {
            let plane = &mut grad[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((c * kh + ki) * kw + kj) * p;
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * s + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let y = self.apply(x)?;
        Ok((y, ConvCache { input: x.clone() }))
    }

    /// Forward pass without building a cache.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, units, ho, wo] = out_shape;
        let (h, w) = (x.height(), x.width());
        let k = self.fan_in();
        let p = ho * wo;
        let mut y = Tensor::zeros(out_shape);
        let bias = self.bias.value.data();
        let weight = self.weight.value.data();
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for i in 0..n {
            let out = y.sample_mut(i);
            for (u, row) in out.chunks_exact_mut(p).enumerate() {
                row.fill(bias[u]);
            }
            let rhs: &[f64] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), (h, w), (ho, wo), &mut cols);
                &cols
            };
            gemm(units, k, p, weight, false, rhs, false, out, 1.0);
        }
        Ok(y)
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor) -> Result<Gradients> {
        self.backward_from_input(&cache.input, grad_out)
    }

    /// Backward pass given the forward input directly.
    pub fn backward_from_input(&self, x: &Tensor, grad_out: &Tensor) -> Result<Gradients> {
        let out_shape = self.output_shape(x.shape())?;
        grad_out.expect_shape(out_shape, "conv backward")?;
        let [n, units, ho, wo] = out_shape;
        let (h, w) = (x.height(), x.width());
        let k = self.fan_in();
        let p = ho * wo;
        let weight = self.weight.value.data();

        let mut grad_in = Tensor::zeros(x.shape());
        let mut grad_w = Tensor::zeros(self.weight.value.shape());
        let mut grad_b = Tensor::zeros(self.bias.value.shape());
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = if pointwise { Vec::new() } else { vec![0.0; k * p] };

        for i in 0..n {
            let dy = grad_out.sample(i);
            for (u, row) in dy.chunks_exact(p).enumerate() {
                grad_b.data_mut()[u] += row.iter().sum::<f64>();
            }
            if pointwise {
                gemm(units, p, k, dy, false, x.sample(i), true, grad_w.data_mut(), 1.0);
                gemm(k, units, p, weight, true, dy, false, grad_in.sample_mut(i), 0.0);
            } else {
                self.im2col(x.sample(i), (h, w), (ho, wo), &mut cols);
                gemm(units, p, k, dy, false, &cols, true, grad_w.data_mut(), 1.0);
                gemm(k, units, p, weight, true, dy, false, &mut dcols, 0.0);
                self.col2im(&dcols, (h, w), (ho, wo), grad_in.sample_mut(i));
            }
        }
        Ok(Gradients {
            input: grad_in,
            params: vec![grad_w, grad_b],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_layer_input, check_layer_params, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sliding-window convolution, independent of im2col.
    fn direct_conv(x: &Tensor, conv: &Conv) -> Tensor {
        let shape = conv.output_shape(x.shape()).unwrap();
        let (kh, kw) = conv.kernel();
        let wt = &conv.weight.value;
        Tensor::from_fn(shape, |[n, u, oy, ox]| {
            let mut s = conv.bias.value.data()[u];
            for c in 0..conv.in_channels() {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                        let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                            s += wt.get(u, c, ki, kj) * x.get(n, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut conv = Conv::new(1, 1, 2, 2, 1, 0).unwrap();
        conv.weight.value.fill(1.0);
        let (y, _) = conv.forward(&Tensor::filled([1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor([2, 1, 4, 5], &mut rng);
        let mut conv = Conv::pointwise(1, 1).unwrap();
        conv.weight.value.fill(1.0);
        assert_eq!(conv.apply(&x).unwrap(), x);
    }

    #[test]
    fn cifar_first_layer_shape() {
        let conv = Conv::new(3, 192, 5, 5, 1, 2).unwrap();
        assert_eq!(conv.output_shape([2, 3, 32, 32]).unwrap(), [2, 192, 32, 32]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let conv = Conv::new(3, 4, 3, 3, 1, 1).unwrap();
        assert!(matches!(conv.apply(&Tensor::zeros([1, 2, 5, 5])), Err(Error::InvalidInput(_))));
        let big = Conv::new(1, 1, 7, 7, 1, 0).unwrap();
        assert!(big.apply(&Tensor::zeros([1, 1, 5, 5])).is_err());
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(k, stride, pad) in &[(3, 1, 1), (5, 1, 2), (3, 2, 0), (2, 2, 1), (1, 1, 0)] {
            let mut conv = Conv::new(3, 4, k, k, stride, pad).unwrap();
            conv.init_he(&mut rng);
            conv.bias.value = random_tensor([1, 4, 1, 1], &mut rng);
            let x = random_tensor([2, 3, 7, 6], &mut rng);
            let fast = conv.apply(&x).unwrap();
            let slow = direct_conv(&x, &conv);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 0), (1, 1, 0)] {
            let mut conv = Conv::new(4, 3, k, k, stride, pad).unwrap();
            conv.init_he(&mut rng);
            conv.bias.value = random_tensor([1, 3, 1, 1], &mut rng);
            let x = random_tensor([2, 4, 6, 6], &mut rng);
            let mut layer = super::super::Layer::Conv(conv);
            assert!(check_layer_input(&mut layer, &x, &mut rng).unwrap() < 1e-4);
            assert!(check_layer_params(&mut layer, &x, &mut rng).unwrap() < 1e-4);
        }
    }
}
