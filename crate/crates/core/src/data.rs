//! Dataset loading (MNIST IDX, CIFAR-10 binary), preprocessing (global
//! contrast normalization, ZCA whitening), augmentation and batching.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub const GCN_SCALE: f64 = 55.0;
pub const GCN_LAMBDA: f64 = 10.0;
pub const GCN_EPSILON: f64 = 1e-8;
pub const ZCA_EPSILON: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcnParams {
    pub scale: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for GcnParams {
    fn default() -> Self {
        GcnParams {
            scale: GCN_SCALE,
            lambda: GCN_LAMBDA,
            epsilon: GCN_EPSILON,
        }
    }
}

/// Whitening fitted on a training split.
#[derive(Clone, Debug)]
pub struct Zca {
    pub mean: Vec<f64>,
    /// Symmetric `D x D` transform, row-major, `D = C * H * W`.
    pub transform: Vec<f64>,
    pub dim: usize,
}

/// Preprocessing applied to a split, in order.
#[derive(Clone, Debug, Default)]
pub struct Preprocessing {
    pub gcn: Option<GcnParams>,
    pub zca: Option<Zca>,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub preprocessing: Preprocessing,
}

impl DatasetSplit {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {l} outside [0, {classes})")));
        }
        Ok(DatasetSplit {
            images,
            labels,
            classes,
            preprocessing: Preprocessing::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> DatasetSplit {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetSplit {
        DatasetSplit {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            preprocessing: self.preprocessing.clone(),
        }
    }

    pub fn apply_gcn(&mut self, params: GcnParams) {
        gcn(&mut self.images, params);
        self.preprocessing.gcn = Some(params);
    }

    pub fn apply_zca(&mut self, fit: &Zca) -> Result<()> {
        zca_apply(&mut self.images, fit)?;
        self.preprocessing.zca = Some(fit.clone());
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("{what}: header truncated")))
}

/// Parses an IDX image file and its label file into an `(N, 1, rows, cols)`
/// split scaled to `[0, 1]`.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<DatasetSplit> {
    let magic = be_u32(images, 0, "image file")?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::format(format!("image file magic {magic:#010x}, expected 0x00000803")));
    }
    let n = be_u32(images, 4, "image file")? as usize;
    let rows = be_u32(images, 8, "image file")? as usize;
    let cols = be_u32(images, 12, "image file")? as usize;
    let magic = be_u32(labels, 0, "label file")?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::format(format!("label file magic {magic:#010x}, expected 0x00000801")));
    }
    let nl = be_u32(labels, 4, "label file")? as usize;
    if nl != n {
        return Err(Error::format(format!("{n} images but {nl} labels")));
    }
    let pixels = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    let body = &images[16..];
    if body.len() != pixels {
        return Err(Error::format(format!(
            "image payload has {} bytes, header implies {pixels}",
            body.len()
        )));
    }
    let lbody = &labels[8..];
    if lbody.len() != n {
        return Err(Error::format(format!(
            "label payload has {} bytes, header implies {n}",
            lbody.len()
        )));
    }
    if let Some(&l) = lbody.iter().find(|&&l| l > 9) {
        return Err(Error::format(format!("label byte {l} is not a digit")));
    }
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::from_vec([n, 1, rows, cols], data)?;
    DatasetSplit::new(images, lbody.iter().map(|&l| l as usize).collect(), 10)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetSplit> {
    parse_mnist_idx(&read(images_path)?, &read(labels_path)?)
}

/// Loads the standard `train-*` and `t10k-*` IDX files from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Parses CIFAR-10 binary records: one label byte, then the red, green and
/// blue `32 x 32` planes.
pub fn parse_cifar10(bytes: &[u8]) -> Result<DatasetSplit> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::format(format!("label byte {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    DatasetSplit::new(Tensor::from_vec([n, 3, 32, 32], data)?, labels, 10)
}

pub fn load_cifar10_binary(paths: &[PathBuf]) -> Result<DatasetSplit> {
    let mut bytes = Vec::new();
    for p in paths {
        let chunk = read(p)?;
        if chunk.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(format!(
                "{}: length {} is not a multiple of {CIFAR_RECORD}",
                p.display(),
                chunk.len()
            )));
        }
        bytes.extend(chunk);
    }
    parse_cifar10(&bytes)
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from a directory.
pub fn load_cifar10_dir(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    Ok((
        load_cifar10_binary(&train)?,
        load_cifar10_binary(&[dir.join("test_batch.bin")])?,
    ))
}

/// Per image: subtract the mean, divide by
/// `max(epsilon, sqrt(lambda + variance))`, multiply by `scale`.
pub fn gcn(images: &mut Tensor, p: GcnParams) {
    let len = images.sample_len();
    if len == 0 {
        return;
    }
    for n in 0..images.batch() {
        let x = images.sample_mut(n);
        let mean = x.iter().sum::<f64>() / len as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
        let k = p.scale / (p.lambda + var).sqrt().max(p.epsilon);
        for v in x.iter_mut() {
            *v = (*v - mean) * k;
        }
    }
}

/// Fits ZCA whitening: `U diag(1 / sqrt(l + epsilon)) U^T` from the
/// eigendecomposition of the (divide-by-N) training covariance.
pub fn zca_fit(images: &Tensor, epsilon: f64) -> Result<Zca> {
    let (n, d) = (images.batch(), images.sample_len());
    if n == 0 {
        return Err(Error::invalid("cannot fit whitening on an empty split"));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(images.sample(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = images.data().to_vec();
    for row in centered.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = vec![0.0; d * d];
    gemm(d, n, d, &centered, true, &centered, false, &mut cov, 0.0);
    cov.iter_mut().for_each(|c| *c /= n as f64);
    if cov.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("covariance is not finite"));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let u = &eig.eigenvectors;
    let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + epsilon).sqrt());
    let w = u * DMatrix::from_diagonal(&scale) * u.transpose();
    let mut transform = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            transform[r * d + c] = w[(r, c)];
        }
    }
    Ok(Zca { mean, transform, dim: d })
}

pub fn zca_apply(images: &mut Tensor, fit: &Zca) -> Result<()> {
    let (n, d) = (images.batch(), images.sample_len());
    if d != fit.dim {
        return Err(Error::invalid(format!(
            "whitening fitted on {}-dimensional samples, got {d}",
            fit.dim
        )));
    }
    let mut centered = images.data().to_vec();
    for row in centered.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&fit.mean) {
            *v -= m;
        }
    }
    // rows times a symmetric transform
    gemm(n, d, d, &centered, false, &fit.transform, false, images.data_mut(), 0.0);
    Ok(())
}

pub const AUGMENT_PAD: usize = 2;

/// Pads a `(C, 32, 32)` image to `36 x 36` with zeros and crops a
/// `32 x 32` window, then optionally mirrors it horizontally.
///
/// The offset `(dy, dx)` in `0..=4` counts the rows and columns between the
/// window and the bottom-right edge of the padded canvas: `(2, 2)` returns
/// the original, `(0, 0)` shifts the content up and left so zeros enter at
/// the bottom and right.
pub fn augment_with(image: &Tensor, dy: usize, dx: usize, flip: bool) -> Result<Tensor> {
    let [n, _, h, w] = image.shape();
    if n != 1 || h != 32 || w != 32 {
        return Err(Error::invalid(format!(
            "augmentation expects one 32x32 image, got {:?}",
            image.shape()
        )));
    }
    let span = 2 * AUGMENT_PAD;
    if dy > span || dx > span {
        return Err(Error::invalid(format!("crop offset ({dy}, {dx}) outside 0..={span}")));
    }
    let padded = image.pad_spatial(AUGMENT_PAD);
    let mut out = padded.crop_spatial(span - dy, span - dx, h, w)?;
    if flip {
        let c = out.channels();
        for ch in 0..c {
            for y in 0..h {
                let start = out.offset(0, ch, y, 0);
                out.data_mut()[start..start + w].reverse();
            }
        }
    }
    Ok(out)
}

/// Random crop offset and a fair coin for mirroring.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Result<Tensor> {
    let span = 2 * AUGMENT_PAD;
    let dy = rng.gen_range(0..=span);
    let dx = rng.gen_range(0..=span);
    let flip = rng.gen_bool(0.5);
    augment_with(image, dy, dx, flip)
}

/// Augments every image of an `(N, C, 32, 32)` batch independently.
pub fn augment_batch<R: Rng + ?Sized>(batch: &Tensor, rng: &mut R) -> Result<Tensor> {
    let [n, c, h, w] = batch.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for i in 0..n {
        let one = Tensor::from_vec([1, c, h, w], batch.sample(i).to_vec())?;
        let a = augment(&one, rng)?;
        out.sample_mut(i).copy_from_slice(a.data());
    }
    Ok(out)
}

/// Sample order for one epoch: a permutation fixed by `(seed, epoch)`, or
/// the identity when `shuffle` is off.
pub fn epoch_order(n: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order
}

/// Iterator over `(images, labels)` batches; the final batch may be short.
pub struct Batches<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    size: usize,
    pos: usize,
}

pub fn batches(split: &DatasetSplit, batch_size: usize, order: Vec<usize>) -> Result<Batches<'_>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if order.len() != split.len() {
        return Err(Error::invalid("sample order does not cover the split"));
    }
    Ok(Batches {
        split,
        order,
        size: batch_size,
        pos: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let labels = idx.iter().map(|&i| self.split.labels[i]).collect();
        Some((self.split.images.select(idx), labels))
    }
}

/// Fraction of mismatched predictions.
pub fn error_rate(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("prediction and label counts differ or are zero"));
    }
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    // fixture writers follow the published byte layouts, independent of the parsers
    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [2051u32, n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(2049u32.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn idx_fixture_round_trips() {
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i * 7 % 256) as u8).collect();
        let s = parse_mnist_idx(&idx_images(2, 28, 28, &pixels), &idx_labels(&[9, 0])).unwrap();
        assert_eq!(s.images.shape(), [2, 1, 28, 28]);
        assert_eq!(s.labels, vec![9, 0]);
        for (v, &b) in s.images.data().iter().zip(&pixels) {
            assert_eq!((v * 255.0).round() as u8, b);
        }
    }

    #[test]
    fn idx_wrong_magic() {
        let mut img = idx_images(1, 2, 2, &[0; 4]);
        img[3] = 0x01;
        let r = parse_mnist_idx(&img, &idx_labels(&[1]));
        assert!(matches!(r, Err(Error::Format(_))));
        let r = parse_mnist_idx(&idx_images(1, 2, 2, &[0; 4]), &idx_images(1, 2, 2, &[0; 4]));
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn idx_truncated() {
        let r = parse_mnist_idx(&idx_images(2, 2, 2, &[0; 7]), &idx_labels(&[1, 2]));
        assert!(matches!(r, Err(Error::Format(_))));
        let r = parse_mnist_idx(&idx_images(2, 2, 2, &[0; 8]), &idx_labels(&[1]));
        assert!(matches!(r, Err(Error::Format(_))));
        assert!(matches!(parse_mnist_idx(&[0, 0], &[]), Err(Error::Format(_))));
    }

    #[test]
    fn cifar_record() {
        let mut rec = vec![3u8];
        rec.extend((0..3072).map(|i| if i == 1024 { 255 } else { 0 }));
        let s = parse_cifar10(&rec).unwrap();
        assert_eq!(s.labels, vec![3]);
        assert_eq!(s.images.shape(), [1, 3, 32, 32]);
        // first byte of the green plane
        assert_eq!(s.images.get(0, 1, 0, 0), 1.0);
        assert_eq!(s.images.sum(), 1.0);
    }

    #[test]
    fn cifar_bad_length() {
        assert!(matches!(parse_cifar10(&[0; 3074]), Err(Error::Format(_))));
    }

    #[test]
    fn gcn_constant_image_is_zero() {
        let mut t = Tensor::filled([1, 3, 4, 4], 0.7);
        gcn(&mut t, GcnParams::default());
        assert!(t.max_abs() < 1e-12);
    }

    #[test]
    fn gcn_variance_without_lambda() {
        let mut t = Tensor::from_fn([2, 1, 5, 5], |[n, _, y, x]| ((n + 1) * (y * 5 + x)) as f64 % 7.0);
        let p = GcnParams {
            scale: 3.0,
            lambda: 0.0,
            epsilon: 1e-12,
        };
        gcn(&mut t, p);
        for n in 0..2 {
            let x = t.sample(n);
            let mean = x.iter().sum::<f64>() / 25.0;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 9.0).abs() < 1e-8, "{var}");
        }
    }

    #[test]
    fn zca_known_covariance() {
        // eight samples on the axes give covariance exactly diag(2, 1)
        let a = 8f64.sqrt();
        let b = (4.0f64 / 3.0).sqrt();
        let pts = [(a, 0.0), (-a, 0.0), (0.0, b), (0.0, -b), (0.0, b), (0.0, -b), (0.0, b), (0.0, -b)];
        let data: Vec<f64> = pts.iter().flat_map(|&(x, y)| [x, y]).collect();
        let t = Tensor::from_vec([8, 2, 1, 1], data).unwrap();
        let fit = zca_fit(&t, 0.0).unwrap();
        let expect = [1.0 / 2f64.sqrt(), 0.0, 0.0, 1.0];
        for (x, y) in fit.transform.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12, "{:?}", fit.transform);
        }
    }

    #[test]
    fn zca_maps_mean_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tensor::from_fn([40, 3, 1, 1], |_| rng.gen_range(-1.0..1.0));
        let fit = zca_fit(&t, 1e-9).unwrap();
        let mut m = Tensor::from_vec([1, 3, 1, 1], fit.mean.clone()).unwrap();
        zca_apply(&mut m, &fit).unwrap();
        assert!(m.max_abs() < 1e-12);
    }

    #[test]
    fn zca_whitens_fitted_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // correlated full-rank 4-d data
        let mut t = Tensor::zeros([300, 4, 1, 1]);
        for n in 0..300 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = t.sample_mut(n);
            s.copy_from_slice(&[z[0], z[0] + 0.5 * z[1], z[1] + 0.5 * z[2], z[3] - z[0]]);
        }
        let fit = zca_fit(&t, 1e-12).unwrap();
        zca_apply(&mut t, &fit).unwrap();
        let d = 4;
        let mut cov = vec![0.0; d * d];
        gemm(d, 300, d, t.data(), true, t.data(), false, &mut cov, 0.0);
        let mut diag = 0.0f64;
        let mut off = 0.0f64;
        for r in 0..d {
            for c in 0..d {
                let v = cov[r * d + c] / 300.0;
                if r == c {
                    diag = diag.max(v);
                } else {
                    off = off.max(v.abs());
                }
            }
        }
        assert!((diag - 1.0).abs() < 1e-6 && off < 1e-6, "{diag} {off}");
    }

    #[test]
    fn zca_dimension_mismatch() {
        let fit = zca_fit(&Tensor::filled([3, 2, 1, 1], 1.0), 1e-2).unwrap();
        assert!(zca_apply(&mut Tensor::zeros([1, 3, 1, 1]), &fit).is_err());
    }

    fn ramp() -> Tensor {
        Tensor::from_fn([1, 3, 32, 32], |[_, c, y, x]| (c * 1024 + y * 32 + x + 1) as f64)
    }

    #[test]
    fn center_offset_is_identity() {
        let img = ramp();
        assert_eq!(augment_with(&img, 2, 2, false).unwrap(), img);
    }

    #[test]
    fn zero_offset_shifts_up_left() {
        let img = ramp();
        let out = augment_with(&img, 0, 0, false).unwrap();
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let expect = if y + 2 < 32 && x + 2 < 32 { img.get(0, c, y + 2, x + 2) } else { 0.0 };
                    assert_eq!(out.get(0, c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn flip_mirrors_rows() {
        let img = ramp();
        let out = augment_with(&img, 2, 2, true).unwrap();
        assert_eq!(out.get(0, 1, 5, 0), img.get(0, 1, 5, 31));
    }

    #[test]
    fn augment_rejects_wrong_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&Tensor::zeros([1, 1, 28, 28]), &mut rng).is_err());
    }

    #[test]
    fn flip_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flips = (0..10_000).filter(|_| rng.gen_bool(0.5)).count();
        let f = flips as f64 / 1e4;
        assert!((0.48..=0.52).contains(&f), "{f}");
    }

    #[test]
    fn batch_sizes_and_coverage() {
        let split = DatasetSplit::new(Tensor::zeros([10, 1, 1, 1]), vec![0; 10], 1).unwrap();
        let order = epoch_order(10, 1, 0, true);
        let sizes: Vec<usize> = batches(&split, 3, order.clone()).unwrap().map(|(_, l)| l.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut seen = order.clone();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(order, epoch_order(10, 1, 0, true));
        assert_ne!(order, epoch_order(10, 1, 1, true));
        assert!(batches(&split, 0, order).is_err());
    }

    #[test]
    fn error_rate_counts_mismatches() {
        assert_eq!(error_rate(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn gcn_affine_invariant(a in 0.5f64..4.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::from_fn([1, 3, 6, 6], |_| rng.gen_range(0.0..1.0));
            let p = GcnParams { scale: 55.0, lambda: 0.0, epsilon: 1e-8 };
            let mut u = x.clone();
            let mut v = x.map_values(|t| a * t + b);
            gcn(&mut u, p);
            gcn(&mut v, p);
            for (s, t) in u.data().iter().zip(v.data()) {
                prop_assert!((s - t).abs() < 1e-8);
            }
        }

        #[test]
        fn augment_shape_preserved(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&ramp(), &mut rng).unwrap();
            prop_assert_eq!(out.shape(), [1, 3, 32, 32]);
        }
    }
}
