use rand::Rng;

use super::{BatchNorm, Conv, Gradients, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One affine piece of a maxout unit: a `1 x 1` convolution followed by
/// its own batch normalization.
#[derive(Clone, Debug)]
pub struct MaxoutPiece {
    pub conv: Conv,
    pub bn: BatchNorm,
}

/// Maxout MLP layer: `y = max_m BN_m(W_m x + b_m)` over `k` pieces, each
/// piece a pointwise convolution with its own batch-norm state.
#[derive(Clone, Debug)]
pub struct Maxout {
    pub pieces: Vec<MaxoutPiece>,
}

#[derive(Clone, Debug)]
pub struct MaxoutCache {
    pub input: Tensor,
    /// Normalized pre-activations of all pieces stacked along channels:
    /// `(N, k * units, H, W)`, piece-major.
    pub x_hat: Tensor,
    /// `1 / sqrt(var + eps)` per stacked channel.
    pub inv_std: Vec<f64>,
    /// Per piece: whether batch statistics were used.
    pub batch_stats: Vec<bool>,
    /// Winning piece per output value; ties go to the lowest index.
    pub argmax: Vec<u8>,
}

impl Maxout {
    pub fn new(in_channels: usize, units: usize, pieces: usize) -> Result<Self> {
        if pieces == 0 || pieces > u8::MAX as usize {
            return Err(Error::invalid(format!("maxout needs 1..=255 pieces, got {pieces}")));
        }
        let pieces = (0..pieces)
            .map(|_| {
                Ok(MaxoutPiece {
                    conv: Conv::pointwise(in_channels, units)?,
                    bn: BatchNorm::new(units),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Maxout { pieces })
    }

    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for p in &mut self.pieces {
            p.conv.init_he(rng);
        }
    }

    pub fn pieces_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn units(&self) -> usize {
        self.pieces[0].conv.units()
    }

    pub fn in_channels(&self) -> usize {
        self.pieces[0].conv.in_channels()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.pieces[0].conv.output_shape(input)
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (m, p) in self.pieces.iter().enumerate() {
            for (name, param) in p.conv.params().into_iter().chain(p.bn.params()) {
                out.push((format!("piece{m}.{name}"), param));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (m, p) in self.pieces.iter_mut().enumerate() {
            for (name, param) in p.conv.params_mut().into_iter().chain(p.bn.params_mut()) {
                out.push((format!("piece{m}.{name}"), param));
            }
        }
        out
    }

    /// All pieces as one `1 x 1` convolution with `k * units` outputs,
    /// piece-major.
    pub fn stacked_conv(&self) -> Conv {
        let (k, units, cin) = (self.pieces.len(), self.units(), self.in_channels());
        let mut weight = Vec::with_capacity(k * units * cin);
        let mut bias = Vec::with_capacity(k * units);
        for p in &self.pieces {
            weight.extend_from_slice(p.conv.weight.value.data());
            bias.extend_from_slice(p.conv.bias.value.data());
        }
        let weight = Tensor::from_vec([k * units, cin, 1, 1], weight).expect("stacked weight shape");
        Conv::from_params(weight, bias, 1, 0).expect("stacked conv")
    }

    /// Normalizes the stacked pre-activations in place and returns
    /// `inv_std` per stacked channel plus, per piece, whether batch
    /// statistics were used. Updates running statistics when they were.
    fn normalize(&mut self, z: &mut Tensor, mode: Mode) -> Result<(Vec<f64>, Vec<bool>)> {
        let units = self.units();
        let train = mode == Mode::Train;
        let batch = if train && self.pieces.iter().any(|p| !p.bn.frozen) {
            if z.batch() * z.plane() < 2 {
                return Err(Error::invalid(
                    "training-mode batch norm needs at least two values per channel",
                ));
            }
            Some(z.channel_moments()?)
        } else {
            None
        };
        let mut mean = Vec::with_capacity(z.channels());
        let mut inv_std = Vec::with_capacity(z.channels());
        let mut used = Vec::with_capacity(self.pieces.len());
        for (m, p) in self.pieces.iter_mut().enumerate() {
            let bn = &mut p.bn;
            let use_batch = train && !bn.frozen;
            if use_batch {
                let (bm, bv) = batch.as_ref().expect("batch moments");
                let (bm, bv) = (&bm[m * units..(m + 1) * units], &bv[m * units..(m + 1) * units]);
                bn.update_running(bm, bv);
                mean.extend_from_slice(bm);
                inv_std.extend(bv.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()));
            } else {
                bn.require_running()?;
                mean.extend_from_slice(&bn.running_mean);
                inv_std.extend(bn.running_var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()));
            }
            used.push(use_batch);
        }
        let plane = z.plane();
        let c = z.channels();
        for (idx, map) in z.data_mut().chunks_exact_mut(plane).enumerate() {
            let j = idx % c;
            let (mu, is) = (mean[j], inv_std[j]);
            map.iter_mut().for_each(|v| *v = (*v - mu) * is);
        }
        Ok((inv_std, used))
    }

    /// Max over pieces of `gamma * x_hat + beta`, with the winning piece.
    fn select(&self, x_hat: &Tensor, track: bool) -> (Tensor, Vec<u8>) {
        let [n, _, h, w] = x_hat.shape();
        let units = self.units();
        let plane = h * w;
        let mut y = Tensor::filled([n, units, h, w], f64::NEG_INFINITY);
        let mut argmax = if track { vec![0u8; y.len()] } else { Vec::new() };
        for i in 0..n {
            for (m, p) in self.pieces.iter().enumerate() {
                let (gamma, beta) = (p.bn.gamma.value.data(), p.bn.beta.value.data());
                for u in 0..units {
                    let src = x_hat.map(i, m * units + u);
                    let off = (i * units + u) * plane;
                    let dst = &mut y.data_mut()[off..off + plane];
                    let (g, b) = (gamma[u], beta[u]);
                    if track {
                        let arg = &mut argmax[off..off + plane];
                        for ((d, a), &v) in dst.iter_mut().zip(arg.iter_mut()).zip(src) {
                            let v = g * v + b;
                            if v > *d {
                                *d = v;
                                *a = m as u8;
                            }
                        }
                    } else {
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = d.max(g * v + b);
                        }
                    }
                }
            }
        }
        (y, argmax)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, MaxoutCache)> {
        self.output_shape(x.shape())?;
        let mut z = self.stacked_conv().apply(x)?;
        let (inv_std, batch_stats) = self.normalize(&mut z, mode)?;
        let (y, argmax) = self.select(&z, true);
        Ok((
            y,
            MaxoutCache {
                input: x.clone(),
                x_hat: z,
                inv_std,
                batch_stats,
                argmax,
            },
        ))
    }

    /// Evaluation-mode pass that leaves the batch-norm states untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let mut z = self.stacked_conv().apply(x)?;
        let units = self.units();
        let plane = z.plane();
        let c = z.channels();
        let mut shift = Vec::with_capacity(c);
        let mut scale = Vec::with_capacity(c);
        for p in &self.pieces {
            p.bn.require_running()?;
            for u in 0..units {
                let is = 1.0 / (p.bn.running_var[u] + p.bn.epsilon).sqrt();
                scale.push(is);
                shift.push(p.bn.running_mean[u]);
            }
        }
        for (idx, map) in z.data_mut().chunks_exact_mut(plane).enumerate() {
            let j = idx % c;
            map.iter_mut().for_each(|v| *v = (*v - shift[j]) * scale[j]);
        }
        Ok(self.select(&z, false).0)
    }

    pub fn backward(&self, cache: &MaxoutCache, grad_out: &Tensor) -> Result<Gradients> {
        let shape = self.output_shape(cache.input.shape())?;
        grad_out.expect_shape(shape, "maxout backward")?;
        let k = self.pieces.len();
        let units = self.units();
        if cache.batch_stats.len() != k
            || cache.argmax.len() != grad_out.len()
            || cache.x_hat.channels() != k * units
        {
            return Err(Error::state("maxout cache does not match the layer"));
        }
        let [n, _, h, w] = shape;
        let plane = h * w;
        let count = (n * plane) as f64;
        let stacked = k * units;

        // gamma and beta gradients only see positions each piece won
        let mut dgamma = vec![0.0; stacked];
        let mut dbeta = vec![0.0; stacked];
        for i in 0..n {
            for u in 0..units {
                let off = (i * units + u) * plane;
                let g = &grad_out.data()[off..off + plane];
                let arg = &cache.argmax[off..off + plane];
                for m in 0..k {
                    let xh = cache.x_hat.map(i, m * units + u);
                    let j = m * units + u;
                    for ((&gv, &a), &h) in g.iter().zip(arg).zip(xh) {
                        if a as usize == m {
                            dbeta[j] += gv;
                            dgamma[j] += gv * h;
                        }
                    }
                }
            }
        }

        // gradient w.r.t. the stacked pre-activations
        let mut dz = Tensor::zeros(cache.x_hat.shape());
        for i in 0..n {
            for m in 0..k {
                let gamma = self.pieces[m].bn.gamma.value.data();
                let batch = cache.batch_stats[m];
                for (u, &gam) in gamma.iter().enumerate() {
                    let j = m * units + u;
                    let off = (i * units + u) * plane;
                    let g = &grad_out.data()[off..off + plane];
                    let arg = &cache.argmax[off..off + plane];
                    let xh = cache.x_hat.map(i, j);
                    let scale = gam * cache.inv_std[j];
                    let (sb, sg) = if batch { (dbeta[j] / count, dgamma[j] / count) } else { (0.0, 0.0) };
                    let doff = (i * stacked + j) * plane;
                    let out = &mut dz.data_mut()[doff..doff + plane];
                    for (((o, &gv), &a), &hv) in out.iter_mut().zip(g).zip(arg).zip(xh) {
                        let dy = if a as usize == m { gv } else { 0.0 };
                        *o = scale * (dy - sb - hv * sg);
                    }
                }
            }
        }

        let conv = self.stacked_conv().backward_from_input(&cache.input, &dz)?;
        let (gw, gb) = (conv.params[0].data(), conv.params[1].data());
        let cin = self.in_channels();
        let mut params = Vec::with_capacity(4 * k);
        for m in 0..k {
            let r = m * units..(m + 1) * units;
            params.push(Tensor::from_vec([units, cin, 1, 1], gw[m * units * cin..(m + 1) * units * cin].to_vec())?);
            params.push(Tensor::from_vec([1, units, 1, 1], gb[r.clone()].to_vec())?);
            params.push(Tensor::from_vec([1, units, 1, 1], dgamma[r.clone()].to_vec())?);
            params.push(Tensor::from_vec([1, units, 1, 1], dbeta[r].to_vec())?);
        }
        Ok(Gradients {
            input: conv.input,
            params,
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

    fn frozen_unit_stats(m: &mut Maxout) {
        for p in &mut m.pieces {
            let u = p.bn.channels();
            p.bn.set_running(vec![0.0; u], vec![1.0; u]).unwrap();
        }
    }

    #[test]
    fn takes_the_larger_piece() {
        let mut m = Maxout::new(1, 1, 2).unwrap();
        frozen_unit_stats(&mut m);
        m.pieces[0].bn.beta.value.fill(0.3);
        m.pieces[1].bn.beta.value.fill(-0.2);
        let (y, cache) = m.forward(&Tensor::zeros([1, 1, 1, 1]), Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.3]);
        assert_eq!(cache.argmax, vec![0]);
    }

    #[test]
    fn single_piece_is_a_scaled_linear_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Maxout::new(3, 4, 1).unwrap();
        m.init_he(&mut rng);
        frozen_unit_stats(&mut m);
        let x = random_tensor([2, 3, 4, 4], &mut rng);
        let (y, _) = m.forward(&x, Mode::Eval).unwrap();
        let linear = m.pieces[0].conv.apply(&x).unwrap();
        let scale = 1.0 / (1.0 + m.pieces[0].bn.epsilon).sqrt();
        for (a, b) in y.data().iter().zip(linear.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn output_dominates_every_piece() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Maxout::new(3, 2, 4).unwrap();
        m.init_he(&mut rng);
        let x = random_tensor([3, 3, 5, 5], &mut rng);
        let (y, _) = m.clone().forward(&x, Mode::Train).unwrap();
        for p in &mut m.pieces {
            let (piece_out, _) = p.bn.forward(&p.conv.apply(&x).unwrap(), Mode::Train).unwrap();
            assert!(y.data().iter().zip(piece_out.data()).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn ties_go_to_the_lowest_piece() {
        let mut m = Maxout::new(1, 1, 3).unwrap();
        frozen_unit_stats(&mut m);
        let (_, cache) = m.forward(&Tensor::zeros([1, 1, 2, 2]), Mode::Eval).unwrap();
        assert!(cache.argmax.iter().all(|&a| a == 0));
    }

    #[test]
    fn dominated_pieces_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Maxout::new(2, 3, 3).unwrap();
        m.init_he(&mut rng);
        m.pieces[1].bn.beta.value.fill(100.0);
        let x = random_tensor([2, 2, 3, 3], &mut rng);
        let (y, cache) = m.forward(&x, Mode::Train).unwrap();
        assert!(cache.argmax.iter().all(|&a| a == 1));
        let g = m.backward(&cache, &random_tensor(y.shape(), &mut rng)).unwrap();
        // params per piece: weight, bias, gamma, beta
        for piece in [0, 2] {
            for t in &g.params[4 * piece..4 * piece + 4] {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(g.params[4].max_abs() > 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = Maxout::new(3, 2, 2).unwrap();
        assert!(matches!(
            m.forward(&Tensor::zeros([1, 4, 2, 2]), Mode::Train),
            Err(Error::InvalidInput(_))
        ));
        assert!(Maxout::new(3, 2, 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Maxout::new(4, 3, 2).unwrap();
        m.init_he(&mut rng);
        let x = random_tensor([2, 4, 6, 6], &mut rng);
        let mut layer = Layer::Maxout(m);
        assert!(check_layer_input(&mut layer, &x, &mut rng).unwrap() < 1e-4);
        assert!(check_layer_params(&mut layer, &x, &mut rng).unwrap() < 1e-4);
    }
}
