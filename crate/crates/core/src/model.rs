//! Architecture configs and the MIN / NIN network builders.
//!
//! A config is a TOML document:
//!
//! ```toml
//! dataset = "mnist"           # "mnist" or "cifar10"
//! architecture = "min"        # "min" or "nin"
//! input = [1, 28, 28]         # channels, height, width
//! classes = 10
//!
//! [[blocks]]                  # exactly three
//! conv = { kh = 5, kw = 5, units = 96, stride = 1, pad = 2, bn = true }
//! mlp = [{ units = 80, pieces = 5 }, { units = 48, pieces = 5 }]
//! pool = { mode = "avg", size = 3, stride = 2 }   # avg | max | global_avg
//! dropout = 0.5               # optional
//!
//! [train]                     # every key optional
//! batch_size = 128
//! learning_rate = 0.05
//! momentum = 0.9
//! weight_decay = 0.0005
//! epochs = 10
//! schedule = [[6, 0.1]]       # (epoch, multiplier) milestones
//! train_subset = 10000
//! augment = false
//! gcn = false
//! zca = false
//! ```

use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv, Dropout, Layer, Maxout, MlpConv, Pool, PoolMode, PoolSpec};
use crate::network::{NamedLayer, Network};

pub const BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Mnist,
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Min,
    Nin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub kh: usize,
    pub kw: usize,
    pub units: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "yes")]
    pub bn: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub units: usize,
    /// Maxout pieces; NIN networks ignore it.
    #[serde(default = "one")]
    pub pieces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub mode: PoolMode,
    #[serde(default = "one")]
    pub size: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub conv: ConvConfig,
    pub mlp: [MlpConfig; 2],
    pub pool: PoolConfig,
    #[serde(default)]
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub gcn: bool,
    #[serde(default)]
    pub zca: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_decay(),
            epochs: default_epochs(),
            schedule: Vec::new(),
            train_subset: None,
            augment: false,
            gcn: false,
            zca: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub dataset: Dataset,
    #[serde(default = "default_arch")]
    pub architecture: Architecture,
    pub input: [usize; 3],
    pub classes: usize,
    pub blocks: Vec<BlockConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_arch() -> Architecture {
    Architecture::Min
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    5e-4
}
fn default_epochs() -> usize {
    10
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<NetworkConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: NetworkConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        config_err(path, inner.message().trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_config(&text)
}

/// Smaller batches give more updates per epoch and run faster per sample on one core.
pub const DESK_BATCH: usize = 32;
pub const DESK_EPOCHS: usize = 10;

/// Desk-scale overrides: layer widths divided by four (the class layer
/// keeps its width), two maxout pieces, a 10 000-sample training subset,
/// 10 epochs with the learning-rate milestones scaled to match, and
/// batches of [`DESK_BATCH`].
pub fn desk_preset(cfg: &NetworkConfig) -> NetworkConfig {
    let mut out = cfg.clone();
    let quarter = |u: usize| u.div_ceil(4).max(1);
    let last = out.blocks.len().saturating_sub(1);
    for (b, block) in out.blocks.iter_mut().enumerate() {
        block.conv.units = quarter(block.conv.units);
        for (m, mlp) in block.mlp.iter_mut().enumerate() {
            if !(b == last && m == 1) {
                mlp.units = quarter(mlp.units);
            }
            mlp.pieces = 2;
        }
    }
    out.train.train_subset = Some(10_000);
    let full = out.train.epochs.max(1);
    out.train.epochs = DESK_EPOCHS;
    for (milestone, _) in &mut out.train.schedule {
        *milestone = ((*milestone * DESK_EPOCHS) as f64 / full as f64).round().max(1.0) as usize;
    }
    out.train.batch_size = DESK_BATCH;
    out
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != BLOCKS {
            return Err(config_err(
                "blocks",
                format!("expected exactly {BLOCKS} blocks, found {}", self.blocks.len()),
            ));
        }
        if self.classes < 2 {
            return Err(config_err("classes", "need at least two classes"));
        }
        if self.input.contains(&0) {
            return Err(config_err("input", "dimensions must be positive"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let at = |f: &str| format!("blocks[{i}].{f}");
            let c = &b.conv;
            if c.kh == 0 || c.kw == 0 || c.units == 0 || c.stride == 0 {
                return Err(config_err(at("conv"), "kernel, units and stride must be positive"));
            }
            for (m, mlp) in b.mlp.iter().enumerate() {
                if mlp.units == 0 {
                    return Err(config_err(at(&format!("mlp[{m}].units")), "must be positive"));
                }
                if mlp.pieces == 0 || mlp.pieces > u8::MAX as usize {
                    return Err(config_err(at(&format!("mlp[{m}].pieces")), "must lie in 1..=255"));
                }
            }
            if b.pool.mode != PoolMode::GlobalAvg && (b.pool.size == 0 || b.pool.stride == 0) {
                return Err(config_err(at("pool"), "size and stride must be positive"));
            }
            if let Some(r) = b.dropout {
                if !(0.0..1.0).contains(&r) {
                    return Err(config_err(at("dropout"), "rate must lie in [0, 1)"));
                }
            }
        }
        let last = &self.blocks[BLOCKS - 1];
        if last.mlp[1].units != self.classes {
            return Err(config_err(
                format!("blocks[{}].mlp[1].units", BLOCKS - 1),
                format!("final layer has {} units but there are {} classes", last.mlp[1].units, self.classes),
            ));
        }
        if last.pool.mode != PoolMode::GlobalAvg {
            return Err(config_err(format!("blocks[{}].pool.mode", BLOCKS - 1), "final pool must be global_avg"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        if t.learning_rate.is_nan() || t.learning_rate <= 0.0 {
            return Err(config_err("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(config_err("train.momentum", "must lie in [0, 1)"));
        }
        if t.weight_decay.is_nan() || t.weight_decay < 0.0 {
            return Err(config_err("train.weight_decay", "must be non-negative"));
        }
        if t.augment && (self.input[1] != 32 || self.input[2] != 32) {
            return Err(config_err("train.augment", "augmentation needs 32x32 inputs"));
        }
        Ok(())
    }

    /// Sets the piece count of every maxout layer.
    pub fn with_pieces(&self, k: usize) -> NetworkConfig {
        let mut out = self.clone();
        for b in &mut out.blocks {
            for m in &mut b.mlp {
                m.pieces = k;
            }
        }
        out
    }

    /// Sets the mode of every pool except the final global one.
    pub fn with_inner_pool(&self, mode: PoolMode) -> NetworkConfig {
        let mut out = self.clone();
        let last = out.blocks.len().saturating_sub(1);
        for b in &mut out.blocks[..last] {
            b.pool.mode = mode;
        }
        out
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        match self.architecture {
            Architecture::Min => build_min(self, seed),
            Architecture::Nin => build_nin(self, seed),
        }
    }
}

fn pool_layer(p: &PoolConfig) -> Result<Layer> {
    let spec = if p.mode == PoolMode::GlobalAvg {
        PoolSpec::global()
    } else {
        PoolSpec::new(p.mode, p.size, p.stride)?
    };
    Ok(Layer::Pool(Pool::new(spec)))
}

fn dropout_seed(seed: u64, block: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(block as u64 + 1)
}

/// Per block: convolution, batch norm, two maxout layers (each piece with
/// its own batch norm), pooling and optional dropout. Weights get He
/// initialization from `seed`.
pub fn build_min(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = cfg.input[0];
    for (i, b) in cfg.blocks.iter().enumerate() {
        let name = |l: &str| format!("block{}.{l}", i + 1);
        let c = &b.conv;
        let mut conv = Conv::new(channels, c.units, c.kh, c.kw, c.stride, c.pad)?;
        conv.init_he(&mut rng);
        layers.push(NamedLayer::new(name("conv"), Layer::Conv(conv)));
        if c.bn {
            layers.push(NamedLayer::new(name("bn"), Layer::BatchNorm(BatchNorm::new(c.units))));
        }
        let mut prev = c.units;
        for (m, mlp) in b.mlp.iter().enumerate() {
            let mut maxout = Maxout::new(prev, mlp.units, mlp.pieces)?;
            maxout.init_he(&mut rng);
            layers.push(NamedLayer::new(name(&format!("mlp{}", m + 1)), Layer::Maxout(maxout)));
            prev = mlp.units;
        }
        layers.push(NamedLayer::new(name("pool"), pool_layer(&b.pool)?));
        if let Some(rate) = b.dropout {
            let d = Dropout::new(rate, dropout_seed(seed, i))?;
            layers.push(NamedLayer::new(name("dropout"), Layer::Dropout(d)));
        }
        channels = prev;
    }
    Network::new(cfg.input, cfg.classes, layers)
}

/// Per block: convolution, ReLU, the two-layer ReLU mlpconv, pooling and
/// optional dropout. Piece counts and batch-norm flags are ignored.
pub fn build_nin(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    if cfg.blocks.iter().any(|b| b.mlp.iter().any(|m| m.pieces != 1)) {
        warn!("NIN networks have no maxout pieces; ignoring `pieces`");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = cfg.input[0];
    for (i, b) in cfg.blocks.iter().enumerate() {
        let name = |l: &str| format!("block{}.{l}", i + 1);
        let c = &b.conv;
        let mut conv = Conv::new(channels, c.units, c.kh, c.kw, c.stride, c.pad)?;
        conv.init_he(&mut rng);
        layers.push(NamedLayer::new(name("conv"), Layer::Conv(conv)));
        layers.push(NamedLayer::new(name("relu"), Layer::Relu));
        let mut mlp = MlpConv::new(c.units, b.mlp[0].units, b.mlp[1].units)?;
        mlp.init_he(&mut rng);
        layers.push(NamedLayer::new(name("mlpconv"), Layer::MlpConv(mlp)));
        layers.push(NamedLayer::new(name("pool"), pool_layer(&b.pool)?));
        if let Some(rate) = b.dropout {
            let d = Dropout::new(rate, dropout_seed(seed, i))?;
            layers.push(NamedLayer::new(name("dropout"), Layer::Dropout(d)));
        }
        channels = b.mlp[1].units;
    }
    Network::new(cfg.input, cfg.classes, layers)
}

/// The shipped configs, embedded so the binary works without the source
/// tree.
pub mod shipped {
    pub const MIN_CIFAR10: &str = include_str!("../configs/min-cifar10.toml");
    pub const MIN_MNIST: &str = include_str!("../configs/min-mnist.toml");
    pub const NIN_CIFAR10: &str = include_str!("../configs/nin-cifar10.toml");
    pub const NIN_MNIST: &str = include_str!("../configs/nin-mnist.toml");
}
