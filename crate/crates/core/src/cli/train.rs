use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    augment_batch, batches, epoch_order, error_rate, load_cifar10_dir, load_mnist_dir, zca_fit, DatasetSplit,
    GcnParams, ZCA_EPSILON,
};
use crate::error::{Error, Result};
use crate::model::{Dataset, NetworkConfig};
use crate::network::{save_checkpoint, Network};
use crate::optim::Sgd;

/// First line of every metrics file; bump when columns change.
pub const METRICS_SCHEMA: &str = "# minnet-metrics v1";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_err,test_err,lr,wall_secs";

const EVAL_BATCH: usize = 100;

/// Everything one training run depends on.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: NetworkConfig,
    pub data: PathBuf,
    pub seed: u64,
    /// Where metrics and checkpoints go; nothing is written when absent.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub train_err: f64,
    /// Percent.
    pub test_err: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:.6e},{:.2}",
            self.epoch, self.train_loss, self.train_err, self.test_err, self.lr, self.wall_secs
        )
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub network: Network,
    pub epochs: Vec<EpochMetrics>,
    /// Percent.
    pub best_test_err: f64,
    /// Percent.
    pub final_test_err: f64,
}

/// Loads both splits of the configured dataset, takes the training subset
/// and applies the configured preprocessing (whitening is fitted on the
/// training split only).
pub fn prepare_data(cfg: &NetworkConfig, dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let (mut train, mut test) = match cfg.dataset {
        Dataset::Mnist => load_mnist_dir(dir)?,
        Dataset::Cifar10 => load_cifar10_dir(dir)?,
    };
    let [c, h, w] = cfg.input;
    if train.images.shape()[1..] != [c, h, w] {
        return Err(Error::invalid(format!(
            "dataset images are {:?}, config expects {:?}",
            &train.images.shape()[1..],
            cfg.input
        )));
    }
    if let Some(n) = cfg.train.train_subset {
        train = train.head(n);
    }
    if cfg.train.gcn {
        train.apply_gcn(GcnParams::default());
        test.apply_gcn(GcnParams::default());
    }
    if cfg.train.zca {
        let fit = zca_fit(&train.images, ZCA_EPSILON)?;
        train.apply_zca(&fit)?;
        test.apply_zca(&fit)?;
    }
    Ok((train, test))
}

/// Error rate in percent over a split, evaluation mode.
pub fn evaluate(net: &Network, split: &DatasetSplit) -> Result<f64> {
    let mut predicted = Vec::with_capacity(split.len());
    for (x, _) in batches(split, EVAL_BATCH, (0..split.len()).collect())? {
        predicted.extend(net.predict(&x)?);
    }
    Ok(100.0 * error_rate(&predicted, &split.labels)?)
}

pub fn train(manifest: &RunManifest) -> Result<TrainReport> {
    let (train, test) = prepare_data(&manifest.config, &manifest.data)?;
    train_on(&manifest.config, manifest.seed, &train, &test, manifest.out.as_deref())
}

pub fn metrics_text(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_SCHEMA}\n{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Trains a freshly built network on prepared splits. With `out`, rewrites
/// `metrics.csv` and `last.ckpt` after every epoch and `best.ckpt` whenever
/// the test error improves.
pub fn train_on(
    cfg: &NetworkConfig,
    seed: u64,
    train: &DatasetSplit,
    test: &DatasetSplit,
    out: Option<&Path>,
) -> Result<TrainReport> {
    let t = &cfg.train;
    let mut net = cfg.build(seed)?;
    let mut sgd = Sgd::new(t.learning_rate, t.momentum, t.weight_decay, t.schedule.clone())?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_A116);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    info!(
        "training {:?} {:?}: {} parameters, {} samples, {} epochs",
        cfg.architecture,
        cfg.dataset,
        net.param_count(),
        train.len(),
        t.epochs
    );
    let start = Instant::now();
    let mut rows = Vec::with_capacity(t.epochs);
    let mut best = f64::INFINITY;
    for epoch in 1..=t.epochs {
        let lr = sgd.apply_schedule(epoch);
        let order = epoch_order(train.len(), seed, epoch as u64, true);
        let (mut loss_sum, mut errors) = (0.0, 0usize);
        for (x, labels) in batches(train, t.batch_size, order)? {
            let x = if t.augment { augment_batch(&x, &mut aug_rng)? } else { x };
            let step = net.train_step(&x, &labels)?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += step.loss * labels.len() as f64;
            errors += step.errors;
            sgd.step(&mut net)?;
        }
        let test_err = evaluate(&net, test)?;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_err: 100.0 * errors as f64 / train.len() as f64,
            test_err,
            lr,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        info!("{}", row.csv_row());
        rows.push(row);
        if let Some(dir) = out {
            fs::write(dir.join("metrics.csv"), metrics_text(&rows))?;
            save_checkpoint(&net, &dir.join("last.ckpt"))?;
            if test_err < best {
                save_checkpoint(&net, &dir.join("best.ckpt"))?;
            }
        }
        best = best.min(test_err);
    }
    let final_test_err = rows.last().map_or(f64::NAN, |r| r.test_err);
    Ok(TrainReport {
        network: net,
        epochs: rows,
        best_test_err: best,
        final_test_err,
    })
}
