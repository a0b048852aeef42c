//! Linear-region capacity bounds and feature-map extraction for
//! visualization.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::network::Network;
use crate::tensor::Tensor;

fn positive(name: &str, v: u64) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn exponent(v: u64) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("exponent {v} is too large")))
}

/// Lower bound on the linear regions of a depth-`layers`, width-`width`
/// maxout network with `pieces` pieces per unit: `k^(L-1) * k^n`.
pub fn maxout_region_bound(layers: u64, width: u64, pieces: u64) -> Result<BigUint> {
    positive("L", layers)?;
    positive("n", width)?;
    positive("k", pieces)?;
    let e = exponent((layers - 1).checked_add(width).ok_or_else(|| Error::invalid("exponent overflow"))?)?;
    Ok(BigUint::from(pieces).pow(e))
}

/// Leading expression of the asymptotic lower bound on the linear regions
/// of a depth-`layers` ReLU network of width `width` on `input`-dimensional
/// inputs: `floor(n / n0)^((L-1) n0) * n^n0`. It witnesses the bound; it is
/// not an exact region count.
pub fn relu_region_bound(layers: u64, width: u64, input: u64) -> Result<BigUint> {
    positive("L", layers)?;
    positive("n0", input)?;
    if width < input {
        return Err(Error::invalid(format!("width n = {width} must be at least n0 = {input}")));
    }
    let e = exponent((layers - 1).checked_mul(input).ok_or_else(|| Error::invalid("exponent overflow"))?)?;
    Ok(BigUint::from(width / input).pow(e) * BigUint::from(width).pow(exponent(input)?))
}

/// Keeps the top `percent` of values: the `ceil(percent * count / 100)`
/// largest entries and anything tied with the smallest of them. Everything
/// else becomes zero.
pub fn threshold_top_percent(map: &[f64], percent: f64) -> Result<Vec<f64>> {
    let cut = cutoff(map, percent)?;
    Ok(map.iter().map(|&v| if v >= cut { v } else { 0.0 }).collect())
}

/// The smallest retained value for `threshold_top_percent`.
pub fn cutoff(map: &[f64], percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::invalid(format!("percent must lie in (0, 100], got {percent}")));
    }
    if map.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut sorted = map.to_vec();
    sorted.sort_by(f64::total_cmp);
    let keep = ((percent / 100.0 * map.len() as f64).ceil() as usize).clamp(1, map.len());
    Ok(sorted[map.len() - keep])
}

/// Activations of one layer for one image plus the two most probable classes.
#[derive(Clone, Debug)]
pub struct FeatureMapDump {
    pub layer: String,
    /// `(1, C, H, W)` activations.
    pub maps: Tensor,
    pub top1: (usize, f64),
    pub top2: (usize, f64),
}

/// Evaluation-mode forward of one `(1, C, H, W)` image, capturing the named
/// layer's output and the top-two softmax candidates.
pub fn extract_feature_maps(net: &Network, image: &Tensor, layer: &str) -> Result<FeatureMapDump> {
    if image.batch() != 1 {
        return Err(Error::invalid("feature extraction takes a single image"));
    }
    let idx = net
        .layer_index(layer)
        .ok_or_else(|| Error::invalid(format!("no layer named `{layer}`")))?;
    let mut acts = net.activations(image)?;
    let logits = acts.pop().expect("non-empty network");
    let probs = softmax(&logits);
    let p = probs.data();
    let mut order: Vec<usize> = (0..p.len()).collect();
    // stable sort keeps the lower class first on ties
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let maps = if idx == acts.len() { logits } else { acts.swap_remove(idx) };
    Ok(FeatureMapDump {
        layer: layer.to_string(),
        maps,
        top1: (order[0], p[order[0]]),
        top2: (order[1], p[order[1]]),
    })
}

/// Min-max scales a map to bytes; a constant map becomes all zeros.
pub fn quantize(map: &[f64]) -> Vec<u8> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    map.iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn encode_pgm(map: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if map.len() != width * height {
        return Err(Error::invalid(format!(
            "map has {} values, expected {width}x{height}",
            map.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(quantize(map));
    Ok(out)
}

/// Writes a binary greyscale PGM.
pub fn export_map_image(map: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes = encode_pgm(map, width, height)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Parses a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM header truncated"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::format("not an 8-bit binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format("bad PGM dimension"));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = bytes.get(pos + 1..).unwrap_or_default();
    if body.len() != w * h {
        return Err(Error::format("PGM payload size mismatch"));
    }
    Ok((w, h, body.to_vec()))
}

/// Summary header for extracted maps.
pub const EXTRACT_CSV_HEADER: &str = "image,layer,channel,kept_fraction,top1,top1_prob,top2,top2_prob";

/// Thresholds each channel of `dump`, writes one PGM per channel into `dir`
/// named `img{image}_{layer}_c{channel}.pgm`, and returns the CSV rows.
pub fn export_dump(dump: &FeatureMapDump, image: usize, percent: f64, dir: &Path) -> Result<Vec<String>> {
    let [_, c, h, w] = dump.maps.shape();
    let mut rows = Vec::with_capacity(c);
    for ch in 0..c {
        let map = dump.maps.map(0, ch);
        let kept = threshold_top_percent(map, percent)?;
        let cut = cutoff(map, percent)?;
        let fraction = map.iter().filter(|&&v| v >= cut).count() as f64 / map.len() as f64;
        let file = dir.join(format!("img{image}_{}_c{ch}.pgm", dump.layer.replace('.', "_")));
        export_map_image(&kept, w, h, &file)?;
        rows.push(format!(
            "{image},{},{ch},{fraction:.6},{},{:.6},{},{:.6}",
            dump.layer, dump.top1.0, dump.top1.1, dump.top2.0, dump.top2.1
        ));
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}
