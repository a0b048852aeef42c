//! Dense 4-D tensors in `(N, C, H, W)` row-major order, plus the small
//! amount of 2-D linear algebra the layers are built on.

use std::fmt;

use crate::error::{Error, Result};

/// Shape of a tensor: batch, channels, height, width.
pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Number of values in one spatial map (`H * W`).
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Number of values in one sample (`C * H * W`).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Single-writer access to the backing buffer.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// The `(y, x)` map of channel `c` in sample `n`.
    pub fn map(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (n * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    /// Gathers the listed samples into a new tensor.
    pub fn select(&self, indices: &[usize]) -> Tensor {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape, "zip_with")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) -> Result<()> {
        self.expect_shape(other.shape, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_shape(&self, shape: Shape, what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::invalid(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance, reduced over `N`, `H` and `W`.
    pub fn channel_moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let [n, c, _, _] = self.shape;
        let count = n * self.plane();
        if count == 0 {
            return Err(Error::invalid("channel_moments on an empty tensor"));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += self.map(i, ch).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for i in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] += self
                    .map(i, ch)
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        Ok((mean, var))
    }

    /// Zero-pads every spatial map by `pad` cells on each side.
    pub fn pad_spatial(&self, pad: usize) -> Tensor {
        if pad == 0 {
            return self.clone();
        }
        let [n, c, h, w] = self.shape;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros([n, c, ph, pw]);
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let src = self.offset(i, ch, y, 0);
                    let dst = out.offset(i, ch, y + pad, pad);
                    out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
                }
            }
        }
        out
    }

    /// Extracts the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop_spatial(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if top + height > h || left + width > w {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {h}x{w}"
            )));
        }
        let mut out = Tensor::zeros([n, c, height, width]);
        for i in 0..n {
            for ch in 0..c {
                for y in 0..height {
                    let src = self.offset(i, ch, top + y, left);
                    let dst = out.offset(i, ch, y, 0);
                    out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
                }
            }
        }
        Ok(out)
    }
}

/// Owned row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::invalid(format!(
            "matmul: ({}x{}) * ({}x{}) inner dimensions differ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        false,
        &b.data,
        false,
        &mut out.data,
        0.0,
    );
    Ok(out)
}

/// `c = op(a) * op(b) + beta * c` on row-major slices, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in its
/// untransposed layout (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for t in 0..a.cols {
                    s += a.get(i, t) * b.get(t, j);
                }
                out.data[i * b.cols + j] = s;
            }
        }
        out
    }

    #[test]
    fn moments_of_one_two_three() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (m, v) = t.channel_moments().unwrap();
        assert!((m[0] - 2.0).abs() < 1e-15);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn moments_of_constant_channel() {
        let t = Tensor::filled([3, 1, 2, 2], 4.5);
        let (m, v) = t.channel_moments().unwrap();
        assert_eq!(m, vec![4.5]);
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn moments_two_channels() {
        let t = Tensor::from_vec([1, 2, 1, 2], vec![0.0, 0.0, 1.0, 3.0]).unwrap();
        let (m, v) = t.channel_moments().unwrap();
        assert_eq!(m, vec![0.0, 2.0]);
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn moments_reject_empty() {
        let t = Tensor::zeros([0, 2, 3, 3]);
        assert!(matches!(t.channel_moments(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pad_two_pixels() {
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = t.pad_spatial(2);
        assert_eq!(p.shape(), [1, 1, 6, 6]);
        assert_eq!(p.sum(), t.sum());
        for y in 0..6 {
            for x in 0..6 {
                let inside = (2..4).contains(&y) && (2..4).contains(&x);
                if !inside {
                    assert_eq!(p.get(0, 0, y, x), 0.0);
                } else {
                    assert_eq!(p.get(0, 0, y, x), t.get(0, 0, y - 2, x - 2));
                }
            }
        }
        assert_eq!(t.pad_spatial(0), t);
    }

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);

        let m = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        assert!(matmul(&Matrix::zeros(4, 2), &m)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(matmul(&m, &m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let a = Matrix::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let b = Matrix::from_vec(4, 2, (0..8).map(|v| (v as f64).sin()).collect()).unwrap();
        let expected = naive(&a, &b);
        // a stored transposed (4x3), b stored transposed (2x4)
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                at[j * 3 + i] = a.get(i, j);
            }
        }
        let mut bt = vec![0.0; 8];
        for i in 0..4 {
            for j in 0..2 {
                bt[j * 4 + i] = b.get(i, j);
            }
        }
        let mut c = vec![0.0; 6];
        gemm(3, 4, 2, &at, true, &bt, true, &mut c, 0.0);
        for (x, y) in c.iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 5), c in matrix(5, 2)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn matmul_agrees_with_naive(a in matrix(5, 3), b in matrix(3, 7)) {
            let fast = matmul(&a, &b).unwrap();
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn pad_then_center_crop_is_identity(
            data in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 4 * 5),
            pad in 0usize..4,
        ) {
            let t = Tensor::from_vec([2, 3, 4, 5], data).unwrap();
            let back = t.pad_spatial(pad).crop_spatial(pad, pad, 4, 5).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn moments_shift_with_constant(
            data in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 3 * 3),
            shift in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let t = Tensor::from_vec([2, 3, 3, 3], data).unwrap();
            let shifted = Tensor::from_fn(t.shape(), |[n, c, y, x]| t.get(n, c, y, x) + shift[c]);
            let (m0, v0) = t.channel_moments().unwrap();
            let (m1, v1) = shifted.channel_moments().unwrap();
            for c in 0..3 {
                prop_assert!((m1[c] - m0[c] - shift[c]).abs() < 1e-12);
                prop_assert!((v1[c] - v0[c]).abs() < 1e-12);
            }
        }
    }
}
