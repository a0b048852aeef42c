use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
    GlobalAvg,
}

/// Spatial pooling window. `GlobalAvg` ignores `size` and `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub size: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(mode: PoolMode, size: usize, stride: usize) -> Result<Self> {
        if mode != PoolMode::GlobalAvg && (size == 0 || stride == 0) {
            return Err(Error::invalid("pool size and stride must be positive"));
        }
        Ok(PoolSpec { mode, size, stride })
    }

    pub fn global() -> Self {
        PoolSpec {
            mode: PoolMode::GlobalAvg,
            size: 1,
            stride: 1,
        }
    }

    /// Output extent along one axis. Windows are placed while their start
    /// lies inside the input, so the last one may overhang the border.
    fn extent(&self, len: usize) -> usize {
        let mut out = (len - self.size).div_ceil(self.stride) + 1;
        while (out - 1) * self.stride >= len {
            out -= 1;
        }
        out
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let [n, c, h, w] = input;
        match self.mode {
            PoolMode::GlobalAvg => {
                if h * w == 0 {
                    return Err(Error::invalid("global pooling of an empty map"));
                }
                Ok([n, c, 1, 1])
            }
            _ => {
                if h < self.size || w < self.size {
                    return Err(Error::invalid(format!(
                        "pool window {} exceeds map {h}x{w}",
                        self.size
                    )));
                }
                Ok([n, c, self.extent(h), self.extent(w)])
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pool {
    pub spec: PoolSpec,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    pub input_shape: Shape,
    /// Flat input index of each output's maximum (max mode only).
    pub argmax: Vec<usize>,
}

impl Pool {
    pub fn new(spec: PoolSpec) -> Self {
        Pool { spec }
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = o * self.spec.stride;
        (start, (start + self.spec.size).min(len))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        let out_shape = self.spec.output_shape(x.shape())?;
        let [n, c, h, w] = x.shape();
        let [_, _, ho, wo] = out_shape;
        let mut y = Tensor::zeros(out_shape);
        let mut argmax = Vec::new();
        if self.spec.mode == PoolMode::Max {
            argmax = vec![0; y.len()];
        }
        let mut o = 0;
        for i in 0..n {
            for ch in 0..c {
                let base = x.offset(i, ch, 0, 0);
                let map = x.map(i, ch);
                if self.spec.mode == PoolMode::GlobalAvg {
                    y.data_mut()[o] = map.iter().sum::<f64>() / map.len() as f64;
                    o += 1;
                    continue;
                }
                for oy in 0..ho {
                    let (y0, y1) = self.window(oy, h);
                    for ox in 0..wo {
                        let (x0, x1) = self.window(ox, w);
                        let value = match self.spec.mode {
                            PoolMode::Avg => {
                                let mut s = 0.0;
                                for yy in y0..y1 {
                                    s += map[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                                }
                                s / ((y1 - y0) * (x1 - x0)) as f64
                            }
                            _ => {
                                let mut best = f64::NEG_INFINITY;
                                let mut at = 0;
                                for yy in y0..y1 {
                                    for xx in x0..x1 {
                                        let v = map[yy * w + xx];
                                        if v > best {
                                            best = v;
                                            at = yy * w + xx;
                                        }
                                    }
                                }
                                argmax[o] = base + at;
                                best
                            }
                        };
                        y.data_mut()[o] = value;
                        o += 1;
                    }
                }
            }
        }
        Ok((
            y,
            PoolCache {
                input_shape: x.shape(),
                argmax,
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor> {
        let out_shape = self.spec.output_shape(cache.input_shape)?;
        grad_out.expect_shape(out_shape, "pool backward")?;
        let [n, c, h, w] = cache.input_shape;
        let [_, _, ho, wo] = out_shape;
        let mut dx = Tensor::zeros(cache.input_shape);
        match self.spec.mode {
            PoolMode::Max => {
                if cache.argmax.len() != grad_out.len() {
                    return Err(Error::state("max-pool cache lacks argmax indices"));
                }
                for (&at, &g) in cache.argmax.iter().zip(grad_out.data()) {
                    dx.data_mut()[at] += g;
                }
            }
            PoolMode::GlobalAvg => {
                let plane = (h * w) as f64;
                for i in 0..n {
                    for ch in 0..c {
                        let g = grad_out.get(i, ch, 0, 0) / plane;
                        let off = dx.offset(i, ch, 0, 0);
                        dx.data_mut()[off..off + h * w].fill(g);
                    }
                }
            }
            PoolMode::Avg => {
                let mut o = 0;
                for i in 0..n {
                    for ch in 0..c {
                        let base = dx.offset(i, ch, 0, 0);
                        for oy in 0..ho {
                            let (y0, y1) = self.window(oy, h);
                            for ox in 0..wo {
                                let (x0, x1) = self.window(ox, w);
                                let g = grad_out.data()[o] / ((y1 - y0) * (x1 - x0)) as f64;
                                for yy in y0..y1 {
                                    for v in &mut dx.data_mut()[base + yy * w + x0..base + yy * w + x1] {
                                        *v += g;
                                    }
                                }
                                o += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_layer_input, random_tensor};
    use crate::layers::{Layer, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> Tensor {
        Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn avg_max_and_global() {
        let avg = Pool::new(PoolSpec::new(PoolMode::Avg, 2, 2).unwrap());
        assert_eq!(avg.forward(&square()).unwrap().0.data(), &[2.5]);
        let max = Pool::new(PoolSpec::new(PoolMode::Max, 2, 2).unwrap());
        assert_eq!(max.forward(&square()).unwrap().0.data(), &[4.0]);
        let global = Pool::new(PoolSpec::global());
        let (y, _) = global.forward(&Tensor::filled([2, 3, 5, 5], 1.75)).unwrap();
        assert_eq!(y.shape(), [2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn overhanging_windows_average_valid_cells() {
        // 3x3 window, stride 2 over a 4-wide row: windows [0,3) and [2,4)
        let spec = PoolSpec::new(PoolMode::Avg, 3, 2).unwrap();
        assert_eq!(spec.output_shape([1, 1, 4, 4]).unwrap(), [1, 1, 2, 2]);
        let x = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f64);
        let (y, _) = Pool::new(spec).forward(&x).unwrap();
        // bottom-right window covers rows 2..4, cols 2..4: {10, 11, 14, 15}
        assert_eq!(y.get(0, 0, 1, 1), 12.5);
        assert_eq!(spec.output_shape([1, 1, 28, 28]).unwrap()[2], 14);
        assert_eq!(spec.output_shape([1, 1, 32, 32]).unwrap()[2], 16);
    }

    #[test]
    fn global_backward_spreads_evenly() {
        let pool = Pool::new(PoolSpec::global());
        let x = Tensor::zeros([1, 2, 3, 4]);
        let (_, cache) = pool.forward(&x).unwrap();
        let dx = pool.backward(&cache, &Tensor::filled([1, 2, 1, 1], 1.0)).unwrap();
        assert!(dx.data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn max_backward_routes_to_maximum() {
        let pool = Pool::new(PoolSpec::new(PoolMode::Max, 2, 2).unwrap());
        let (_, cache) = pool.forward(&square()).unwrap();
        let dx = pool.backward(&cache, &Tensor::filled([1, 1, 1, 1], 3.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn window_larger_than_map_is_rejected() {
        let pool = Pool::new(PoolSpec::new(PoolMode::Avg, 3, 1).unwrap());
        assert!(pool.forward(&square()).is_err());
    }

    #[test]
    fn full_coverage_avg_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor([2, 3, 6, 6], &mut rng);
        let (y, _) = Pool::new(PoolSpec::new(PoolMode::Avg, 2, 2).unwrap()).forward(&x).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let a = x.map(n, c).iter().sum::<f64>() / 36.0;
                let b = y.map(n, c).iter().sum::<f64>() / 9.0;
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for spec in [
            PoolSpec::new(PoolMode::Avg, 3, 2).unwrap(),
            PoolSpec::new(PoolMode::Max, 3, 2).unwrap(),
            PoolSpec::new(PoolMode::Max, 2, 2).unwrap(),
            PoolSpec::global(),
        ] {
            let x = random_tensor([2, 4, 6, 6], &mut rng);
            let mut layer = Layer::Pool(Pool::new(spec));
            assert!(check_layer_input(&mut layer, &x, &mut rng).unwrap() < 1e-4, "{spec:?}");
            let _ = layer.forward(&x, Mode::Eval).unwrap();
        }
    }
}
