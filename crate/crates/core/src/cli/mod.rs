//! Command-line front end: training, evaluation, sweeps over maxout piece
//! counts and pooling modes, region-bound tables and feature-map export.
//!
//! Every command is a library function so it can be driven from tests.

mod train;

pub use train::{
    evaluate, metrics_text, prepare_data, train, train_on, EpochMetrics, RunManifest, TrainReport, METRICS_HEADER,
    METRICS_SCHEMA,
};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::analysis::{export_dump, extract_feature_maps, maxout_region_bound, relu_region_bound, write_csv, EXTRACT_CSV_HEADER};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::layers::PoolMode;
use crate::model::{desk_preset, load_config, parse_config, shipped, NetworkConfig};
use crate::network::{load_checkpoint, Network};
use crate::tensor::Tensor;

#[derive(Debug, Parser)]
#[command(name = "minnet", version, about = "Maxout network-in-network training and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Architecture and training config (TOML); defaults to the shipped MNIST MIN config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset directory (MNIST IDX files or CIFAR-10 binary batches).
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds, starting at `--seed`, for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Train on the first N training samples only.
    #[arg(long, global = true, value_name = "N")]
    pub train_subset: Option<usize>,
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// Comma-separated maxout piece counts.
    #[arg(long, global = true, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub k: Vec<usize>,
    /// Layer whose maps `extract` exports.
    #[arg(long, global = true, value_name = "NAME")]
    pub layer: Option<String>,
    #[arg(long, global = true, default_value_t = 50.0)]
    pub top_percent: f64,
    /// Comma-separated test-set indices for `extract`.
    #[arg(long, global = true, value_delimiter = ',', default_value = "0")]
    pub images: Vec<usize>,
    /// Checkpoint for `eval` and `extract`; defaults to `<out>/best.ckpt`.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Network depth L for `region-bound`.
    #[arg(long, global = true)]
    pub depth: Option<u64>,
    /// Layer width n for `region-bound`.
    #[arg(long, global = true)]
    pub width: Option<u64>,
    /// Maxout pieces for `region-bound`.
    #[arg(long, global = true)]
    pub pieces: Option<u64>,
    /// Input width n0 for the ReLU bound in `region-bound`.
    #[arg(long, global = true)]
    pub input_width: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network, writing metrics.csv, last.ckpt and best.ckpt.
    Train,
    /// Test-set error of a checkpoint, in percent.
    Eval,
    /// Train one network per maxout piece count in `--k`.
    SweepPieces,
    /// Train with average and with max pooling in the first two blocks.
    ComparePooling,
    /// Print linear-region lower bounds.
    RegionBound,
    /// Export thresholded feature maps of `--layer` as PGM images.
    Extract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Laptop scale: quarter widths, two pieces, 10k samples, 10 epochs.
    Desk,
    /// The config as written.
    Paper,
}

impl Cli {
    /// The config after preset and command-line overrides.
    pub fn resolved_config(&self) -> Result<NetworkConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => parse_config(shipped::MIN_MNIST)?,
        };
        if self.preset == Preset::Desk {
            cfg = desk_preset(&cfg);
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch {
            cfg.train.batch_size = b;
        }
        if let Some(n) = self.train_subset {
            cfg.train.train_subset = Some(n);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Usage("--data DIR is required for this command".into()))
    }

    fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds.max(1)).map(|i| self.seed + i).collect()
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("best.ckpt"))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Train => {
            let manifest = RunManifest {
                config: cli.resolved_config()?,
                data: cli.data_dir()?.to_path_buf(),
                seed: cli.seed,
                out: Some(cli.out.clone()),
            };
            let report = train(&manifest)?;
            println!(
                "final test error {:.2}%, best {:.2}%, outputs in {}",
                report.final_test_err,
                report.best_test_err,
                cli.out.display()
            );
        }
        Command::Eval => {
            let cfg = cli.resolved_config()?;
            let (_, test) = prepare_data(&cfg, cli.data_dir()?)?;
            let err = eval_checkpoint(&cli.checkpoint_path(), cli.config.is_some().then_some(&cfg), &test)?;
            println!("{err:.2}");
        }
        Command::SweepPieces => {
            let cfg = cli.resolved_config()?;
            let (train, test) = prepare_data(&cfg, cli.data_dir()?)?;
            let rows = sweep_pieces(&cfg, &cli.k, &cli.seed_list(), &train, &test)?;
            let path = cli.out.join("sweep_pieces.csv");
            fs::create_dir_all(&cli.out)?;
            write_csv(&path, SWEEP_HEADER, &rows.iter().map(|r| r.csv_row(&cfg)).collect::<Vec<_>>())?;
            for r in &rows {
                println!("k={} seed={} test_err={:.2}%", r.k, r.seed, r.test_err);
            }
        }
        Command::ComparePooling => {
            let cfg = cli.resolved_config()?;
            let (train, test) = prepare_data(&cfg, cli.data_dir()?)?;
            let rows = compare_pooling(&cfg, &cli.seed_list(), &train, &test)?;
            fs::create_dir_all(&cli.out)?;
            let lines: Vec<String> = rows.iter().map(PoolRow::csv_row).collect();
            write_csv(&cli.out.join("compare_pooling.csv"), POOL_HEADER, &lines)?;
            for r in &rows {
                println!("{} seed={} test_err={:.2}%", mode_name(r.mode), r.seed, r.test_err);
            }
        }
        Command::RegionBound => {
            let depth = cli.depth.ok_or_else(|| Error::Usage("--depth L is required".into()))?;
            let width = cli.width.ok_or_else(|| Error::Usage("--width N is required".into()))?;
            print!("{}", region_bound_table(depth, width, cli.pieces, cli.input_width)?);
        }
        Command::Extract => {
            let cfg = cli.resolved_config()?;
            let layer = cli
                .layer
                .as_deref()
                .ok_or_else(|| Error::Usage("--layer NAME is required".into()))?;
            let (_, test) = prepare_data(&cfg, cli.data_dir()?)?;
            let net = load_checkpoint(&cli.checkpoint_path())?;
            let n = extract(&net, &test, &cli.images, layer, cli.top_percent, &cli.out)?;
            println!("wrote {n} maps and extract.csv to {}", cli.out.display());
        }
    }
    Ok(())
}

/// Fails with a format error unless `a` and `b` have the same input shape,
/// classes, layer names and parameter shapes.
pub fn check_architecture(a: &Network, b: &Network) -> Result<()> {
    if a.input_shape() != b.input_shape() || a.classes() != b.classes() {
        return Err(Error::format("checkpoint input shape or class count differs from the config"));
    }
    let sig = |n: &Network| -> Vec<(String, [usize; 4])> {
        n.params().into_iter().map(|(name, p)| (name, p.value.shape())).collect()
    };
    let names = |n: &Network| -> Vec<String> { n.layers().iter().map(|l| l.name.clone()).collect() };
    if names(a) != names(b) || sig(a) != sig(b) {
        return Err(Error::format("checkpoint architecture differs from the config"));
    }
    Ok(())
}

/// Test error in percent of a saved network, optionally checked against the
/// architecture a config builds.
pub fn eval_checkpoint(path: &Path, cfg: Option<&NetworkConfig>, test: &DatasetSplit) -> Result<f64> {
    let net = load_checkpoint(path)?;
    if let Some(cfg) = cfg {
        check_architecture(&net, &cfg.build(0)?)?;
    }
    evaluate(&net, test)
}

pub const SWEEP_HEADER: &str = "k,seed,batch_size,learning_rate,momentum,weight_decay,epochs,train_samples,test_err";

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub train_samples: usize,
    /// Percent.
    pub test_err: f64,
}

impl SweepRow {
    pub fn csv_row(&self, cfg: &NetworkConfig) -> String {
        let t = &cfg.train;
        format!(
            "{},{},{},{},{},{},{},{},{:.4}",
            self.k, self.seed, t.batch_size, t.learning_rate, t.momentum, t.weight_decay, t.epochs, self.train_samples, self.test_err
        )
    }
}

/// One training run per `(k, seed)` with every other setting fixed.
pub fn sweep_pieces(
    cfg: &NetworkConfig,
    ks: &[usize],
    seeds: &[u64],
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<Vec<SweepRow>> {
    if ks.is_empty() {
        return Err(Error::Usage("--k needs at least one piece count".into()));
    }
    let mut rows = Vec::new();
    for &k in ks {
        let c = cfg.with_pieces(k);
        c.validate()?;
        for &seed in seeds {
            info!("sweep: k={k} seed={seed}");
            let report = train_on(&c, seed, train, test, None)?;
            rows.push(SweepRow {
                k,
                seed,
                train_samples: train.len(),
                test_err: report.final_test_err,
            });
        }
    }
    Ok(rows)
}

pub const POOL_HEADER: &str = "mode,seed,test_err";

#[derive(Clone, Debug)]
pub struct PoolRow {
    pub mode: PoolMode,
    pub seed: u64,
    /// Percent.
    pub test_err: f64,
}

fn mode_name(m: PoolMode) -> &'static str {
    match m {
        PoolMode::Avg => "avg",
        PoolMode::Max => "max",
        PoolMode::GlobalAvg => "global_avg",
    }
}

impl PoolRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.4}", mode_name(self.mode), self.seed, self.test_err)
    }
}

/// Trains with average and with max pooling in every block but the last,
/// whose pool stays global average.
pub fn compare_pooling(
    cfg: &NetworkConfig,
    seeds: &[u64],
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<Vec<PoolRow>> {
    let mut rows = Vec::new();
    for mode in [PoolMode::Avg, PoolMode::Max] {
        let c = cfg.with_inner_pool(mode);
        for &seed in seeds {
            info!("pooling: {} seed={seed}", mode_name(mode));
            let report = train_on(&c, seed, train, test, None)?;
            rows.push(PoolRow {
                mode,
                seed,
                test_err: report.final_test_err,
            });
        }
    }
    Ok(rows)
}

/// Aligned table of the maxout bound (when `pieces` is given) and the ReLU
/// bound (when `input_width` is given).
pub fn region_bound_table(depth: u64, width: u64, pieces: Option<u64>, input_width: Option<u64>) -> Result<String> {
    let usage = |e: Error| Error::Usage(e.to_string());
    let mut rows = vec![["bound".to_string(), "L".into(), "n".into(), "n0".into(), "k".into(), "regions".into()]];
    if let Some(k) = pieces {
        let b = maxout_region_bound(depth, width, k).map_err(usage)?;
        rows.push(["maxout".into(), depth.to_string(), width.to_string(), "-".into(), k.to_string(), b.to_string()]);
    }
    if let Some(n0) = input_width {
        let b = relu_region_bound(depth, width, n0).map_err(usage)?;
        rows.push(["relu".into(), depth.to_string(), width.to_string(), n0.to_string(), "-".into(), b.to_string()]);
    }
    if rows.len() == 1 {
        return Err(Error::Usage("give --pieces K and/or --input-width N0".into()));
    }
    let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// Writes thresholded maps of `layer` for the chosen test images plus
/// `extract.csv`; returns the number of PGM files written.
pub fn extract(
    net: &Network,
    test: &DatasetSplit,
    images: &[usize],
    layer: &str,
    percent: f64,
    out: &Path,
) -> Result<usize> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &i in images {
        if i >= test.len() {
            return Err(Error::invalid(format!("image index {i} outside the {}-image test set", test.len())));
        }
        let image: Tensor = test.images.select(&[i]);
        let dump = extract_feature_maps(net, &image, layer)?;
        rows.extend(export_dump(&dump, i, percent, out)?);
    }
    write_csv(&out.join("extract.csv"), EXTRACT_CSV_HEADER, &rows)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("minnet").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_parse() {
        let cli = parse(&["sweep-pieces", "--k", "1,4", "--preset", "desk", "--seed", "3", "--seeds", "2"]);
        assert!(matches!(cli.command, Command::SweepPieces));
        assert_eq!(cli.k, vec![1, 4]);
        assert_eq!(cli.seed_list(), vec![3, 4]);
        let cfg = cli.resolved_config().unwrap();
        assert_eq!(cfg.train.epochs, 10);
    }

    #[test]
    fn overrides_apply_after_preset() {
        let cfg = parse(&["train", "--preset", "desk", "--epochs", "2", "--batch", "7"]).resolved_config().unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.batch_size), (2, 7));
    }

    #[test]
    fn region_table() {
        let t = region_bound_table(2, 4, Some(2), Some(2)).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("maxout") && lines[1].ends_with("32"));
        assert!(lines[2].starts_with("relu") && lines[2].ends_with("64"));
        assert!(matches!(region_bound_table(2, 1, None, Some(3)), Err(Error::Usage(_))));
        assert!(matches!(region_bound_table(2, 4, None, None), Err(Error::Usage(_))));
    }

    #[test]
    fn missing_data_is_usage_error() {
        assert!(matches!(run(&parse(&["train"])), Err(Error::Usage(_))));
    }
}
