//! Command-line surface. Each subcommand is a plain function over its
//! parsed arguments so it can be called from tests as well.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastsal_core::data::{normalize_pixels, resize_bilinear, split_random, synth_dataset, Sample};
use fastsal_core::metrics::{evaluate, ComparisonTable, DensityMap, EvalInput, Metric, MetricConfig, MetricReport, RankedRow};
use fastsal_core::net::{CostReport, Model, ModelConfig};
use fastsal_core::train::{train, OptimizerState, TrainConfig};
use fastsal_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::archive::WeightArchive;
use crate::bench::{run_bench, BenchReport};
use crate::dataset::{load_ground_truth, load_manifest, load_samples, Split};
use crate::error::{Error, Result};
use crate::{pnm, table};

#[derive(Debug, Parser)]
#[command(name = "fastsal", version, about = "Compact real-time saliency prediction")]
pub struct Cli {
    /// Global seed; falls back to SALI_SEED, then 0.
    #[arg(long, global = true, env = "SALI_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameters, MACs and FLOPs per layer and in total.
    Describe(DescribeArgs),
    /// Train on manifests or on generated data.
    Train(TrainArgs),
    /// Predict a saliency map for one image.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Rank models by their average normalized metric.
    Compare(CompareArgs),
    /// Time single-image inference.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

/// Model selection shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Model configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation variant: 1 plain, 2 with CDC, 3 with CDC and fc2d.
    #[arg(long)]
    pub variant: Option<u8>,
    /// Square input size; the fc2d grid follows.
    #[arg(long)]
    pub input_size: Option<usize>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => ModelConfig::default(),
        };
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(s) = self.input_size {
            cfg = cfg.with_input_size(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---------- describe ----------

#[derive(Debug, Clone, Default, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub config: ModelConfig,
    pub fc2d_params: usize,
    pub cost: CostReport,
}

pub fn cmd_describe(args: &DescribeArgs, seed: u64) -> Result<Description> {
    let config = args.model.resolve()?;
    let model = Model::<f32>::build(&config, seed)?;
    Ok(Description {
        fc2d_params: model.fc2d_params(),
        cost: model.cost(config.input_size)?,
        config,
    })
}

pub fn render_description(d: &Description, format: Format) -> Result<String> {
    if format == Format::Json {
        return Ok(serde_json::to_string_pretty(d)?);
    }
    let mut s = format!(
        "variant {} at {}x{}\n{:<34} {:<18} {:>10} {:>14} {:>14}\n",
        d.config.variant, d.cost.input_size.0, d.cost.input_size.1, "layer", "output", "params", "MACs", "FLOPs"
    );
    for r in &d.cost.rows {
        s += &format!(
            "{:<34} {:<18} {:>10} {:>14} {:>14}\n",
            r.name,
            format!("{:?}", r.output_shape),
            r.params,
            r.macs,
            r.flops
        );
    }
    s += &format!(
        "{:<34} {:<18} {:>10} {:>14} {:>14}\n",
        "total", "", d.cost.params, d.cost.macs, d.cost.flops
    );
    s += &format!(
        "params {:.3} M, FLOPs {:.3} G, fc2d {} params\n",
        d.cost.params as f64 / 1e6,
        d.cost.flops as f64 / 1e9,
        d.fc2d_params
    );
    Ok(s)
}

// ---------- train ----------

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training configuration JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Manifest whose `train` rows are used for training.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Manifest whose `val` rows are used for validation.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Generate this many synthetic samples instead of reading manifests.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Weight of the central Gaussian in synthetic ground truth.
    #[arg(long, default_value_t = 0.0)]
    pub center_bias: f64,
    /// Resize loaded samples to the model input size.
    #[arg(long)]
    pub resize: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// JSON sidecar of a saved checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub val_loss: f64,
    pub optimizer_step: u64,
    pub weights: String,
    pub optimizer_state: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_weights: PathBuf,
    pub history_csv: PathBuf,
    pub best_epoch: usize,
    pub initial_val_kl: f64,
    pub best_val_kl: f64,
}

fn optimizer_archive(opt: &OptimizerState<f32>) -> Result<WeightArchive> {
    let mut params = fastsal_core::net::ParamStore::new();
    for (name, m) in &opt.moments {
        params.insert(&format!("m.{name}"), m.m.clone(), true)?;
        params.insert(&format!("v.{name}"), m.v.clone(), true)?;
    }
    Ok(WeightArchive { config: None, params })
}

fn synthetic_split(n: usize, size: usize, center_bias: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if n < 2 {
        return Err(Error::Usage("--synthetic needs at least 2 samples".into()));
    }
    let data = synth_dataset(n, size, center_bias, seed)?;
    let n_val = (n / 5).max(1);
    let parts = split_random(n, &[n - n_val, n_val], seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&parts[0]), pick(&parts[1])))
}

fn manifest_split(path: &Path, split: Split, resize: Option<(usize, usize)>) -> Result<Vec<Sample>> {
    let m = load_manifest(path)?;
    let rows = m.of_split(split);
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no {split} rows", path.display())));
    }
    load_samples(&rows, resize)
}

pub fn cmd_train(args: &TrainArgs, seed: u64) -> Result<TrainSummary> {
    let model_cfg = args.model.resolve()?;
    let mut cfg: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if args.max_steps.is_some() {
        cfg.max_steps = args.max_steps;
    }
    if let Some(v) = args.lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    let (h, w) = model_cfg.input_size;
    let (train_set, val_set) = match (args.synthetic, &args.train_manifest, &args.val_manifest) {
        (Some(n), _, _) => {
            if h != w {
                return Err(Error::Usage("synthetic data needs a square input size".into()));
            }
            synthetic_split(n, h, args.center_bias, seed)?
        }
        (None, Some(t), Some(v)) => {
            let resize = args.resize.then_some((h, w));
            (manifest_split(t, Split::Train, resize)?, manifest_split(v, Split::Val, resize)?)
        }
        _ => {
            return Err(Error::Usage(
                "pass --train-manifest and --val-manifest, or --synthetic N".into(),
            ))
        }
    };
    let mut model = Model::<f32>::build(&model_cfg, seed)?;
    let outcome = train(&mut model, &train_set, &val_set, &cfg)?;

    create_dir(&args.out)?;
    let best_weights = args.out.join("best.fsal");
    let best_opt = args.out.join("best.optim.fsal");
    WeightArchive {
        config: Some(model_cfg.clone()),
        params: outcome.best.params.clone(),
    }
    .save(&best_weights)?;
    optimizer_archive(&outcome.best.optimizer)?.save(&best_opt)?;
    WeightArchive::from_model(&model).save(&args.out.join("final.fsal"))?;
    write_json(
        &args.out.join("best.json"),
        &CheckpointInfo {
            epoch: outcome.best.epoch,
            val_loss: outcome.best.val_loss,
            optimizer_step: outcome.best.optimizer.step,
            weights: "best.fsal".into(),
            optimizer_state: "best.optim.fsal".into(),
            model: model_cfg,
            train: cfg,
        },
    )?;
    let history_csv = args.out.join("history.csv");
    let mut wr = csv::Writer::from_path(&history_csv)?;
    wr.write_record(["epoch", "train_loss", "val_loss", "val_kl", "lr"])?;
    for r in &outcome.history {
        wr.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_kl.to_string(),
            r.lr.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io(&history_csv, e))?;
    Ok(TrainSummary {
        best_weights,
        history_csv,
        best_epoch: outcome.best.epoch,
        initial_val_kl: outcome.initial_val_kl,
        best_val_kl: outcome.history[outcome.best.epoch].val_kl,
    })
}

// ---------- predict ----------

#[derive(Debug, Clone, Default, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output PGM (16-bit) path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the raw map as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Resize the image to the model input, and the map back.
    #[arg(long)]
    pub resize: bool,
    /// Model configuration, when the archive carries none.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Saliency density for one `[3,H,W]` image in `[0,1]`.
pub fn predict_image(model: &Model<f32>, image: &Tensor<f32>, resize: bool) -> Result<DensityMap> {
    let (ih, iw) = (image.shape()[1], image.shape()[2]);
    let target = model.config.input_size;
    let x = if (ih, iw) == target {
        image.clone()
    } else if resize {
        resize_bilinear(image, target)?
    } else {
        return Err(Error::Data(format!(
            "image is {ih}x{iw} but the model expects {}x{}; pass --resize",
            target.0, target.1
        )));
    };
    let x = normalize_pixels(&x, &fastsal_core::data::PIXEL_MEAN, &fastsal_core::data::PIXEL_STD)?;
    let y = model.forward(&x.reshape(&[1, 3, target.0, target.1])?)?;
    let map = DensityMap::from_tensor(&y)?;
    Ok(crate::dataset::resize_density(&map, (ih, iw))?)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<DensityMap> {
    let config: Option<ModelConfig> = args.config.as_deref().map(read_json).transpose()?;
    let model = WeightArchive::load(&args.weights)?.into_model(config.as_ref())?;
    let image = pnm::load_image(&args.image)?;
    let map = predict_image(&model, &image, args.resize)?;
    pnm::save_density(&args.out, &map)?;
    if let Some(j) = &args.json {
        write_json(j, &map)?;
    }
    Ok(map)
}

// ---------- eval ----------

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Directory of `<image stem>.pgm` predictions.
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_manifest: PathBuf,
    /// Comma-separated metric names; all by default.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Only rows of this split.
    #[arg(long)]
    pub split: Option<String>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-image CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs, seed: u64) -> Result<MetricReport> {
    let metrics: Vec<Metric> = if args.metrics.is_empty() {
        Metric::ALL.to_vec()
    } else {
        args.metrics
            .iter()
            .map(|m| m.parse::<Metric>().map_err(|e| Error::Usage(e.to_string())))
            .collect::<Result<_>>()?
    };
    let manifest = load_manifest(&args.gt_manifest)?;
    let split: Option<Split> = args.split.as_deref().map(str::parse).transpose()?;
    let rows: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    if rows.is_empty() {
        return Err(Error::Data("no ground-truth rows to evaluate".into()));
    }
    let mut preds = Vec::with_capacity(rows.len());
    let mut gts = Vec::with_capacity(rows.len());
    let mut missing = Vec::new();
    for e in &rows {
        let p = args.pred_dir.join(format!("{}.pgm", e.id()));
        if !p.exists() {
            missing.push(e.id());
            continue;
        }
        let pred = pnm::load_density(&p)?;
        gts.push(load_ground_truth(e, pred.size())?);
        preds.push(pred);
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "no prediction in {} for: {}",
            args.pred_dir.display(),
            missing.join(", ")
        )));
    }
    let ids: Vec<String> = rows.iter().map(|e| e.id()).collect();
    let inputs: Vec<EvalInput> = (0..rows.len())
        .map(|i| EvalInput {
            id: &ids[i],
            pred: &preds[i],
            gt: &gts[i].0,
            fixations: gts[i].1.as_ref().filter(|f| !f.is_empty()),
        })
        .collect();
    let cfg = MetricConfig {
        seed,
        ..MetricConfig::default()
    };
    let report = evaluate(&inputs, &metrics, &cfg)?;
    if let Some(path) = &args.csv {
        let mut wr = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        wr.write_record(&header)?;
        for im in &report.images {
            let mut rec = vec![im.id.clone()];
            rec.extend(
                metrics
                    .iter()
                    .map(|m| im.values[m.name()].value().map_or_else(String::new, |v| v.to_string())),
            );
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

// ---------- compare ----------

#[derive(Debug, Clone, Default, Args)]
pub struct CompareArgs {
    /// Input CSV: header, orientation row, one row per model.
    #[arg(long)]
    pub table: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(ComparisonTable, Vec<RankedRow>)> {
    let f = fs::File::open(&args.table).map_err(|e| Error::io(&args.table, e))?;
    let t = table::read_table(f).map_err(|e| match e {
        Error::Data(d) => Error::format(&args.table, d),
        other => other,
    })?;
    let ranked = t.ranked()?;
    Ok((t, ranked))
}

// ---------- bench ----------

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trained weights; random weights otherwise (timing does not depend
    /// on the values).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_bench(args: &BenchArgs, seed: u64) -> Result<BenchReport> {
    let model = match &args.weights {
        Some(w) => {
            let cfg = if args.model.config.is_some() || args.model.variant.is_some() || args.model.input_size.is_some() {
                Some(args.model.resolve()?)
            } else {
                None
            };
            WeightArchive::load(w)?.into_model(cfg.as_ref())?
        }
        None => {
            let mut m = args.model.clone();
            if m.input_size.is_none() && m.config.is_none() {
                m.input_size = Some(240);
            }
            Model::<f32>::build(&m.resolve()?, seed)?
        }
    };
    run_bench(&model, args.runs, args.warmup, args.threads, seed)
}

// ---------- dispatch ----------

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Describe(a) => {
            let d = cmd_describe(&a, seed)?;
            emit(None, &(render_description(&d, a.format)? + "\n"))
        }
        Command::Train(a) => {
            let s = cmd_train(&a, seed)?;
            println!(
                "best checkpoint: {} (epoch {}, val kl {:.6}, initial {:.6})",
                s.best_weights.display(),
                s.best_epoch,
                s.best_val_kl,
                s.initial_val_kl
            );
            println!("history: {}", s.history_csv.display());
            Ok(())
        }
        Command::Predict(a) => {
            cmd_predict(&a)?;
            println!("{}", a.out.display());
            Ok(())
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a, seed)?;
            emit(a.out.as_deref(), &(serde_json::to_string_pretty(&r)? + "\n"))
        }
        Command::Compare(a) => {
            let (t, ranked) = cmd_compare(&a)?;
            let mut buf = Vec::new();
            table::write_ranked(&mut buf, &t, &ranked)?;
            emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Bench(a) => {
            let r = cmd_bench(&a, seed)?;
            let text = serde_json::to_string_pretty(&r)? + "\n";
            if a.out.is_some() {
                emit(a.out.as_deref(), &text)?;
            }
            println!(
                "variant {} {}x{}: median {:.2} ms, mean {:.2} ms, p95 {:.2} ms over {} runs ({} thread(s))",
                r.variant, r.input_size.0, r.input_size.1, r.median_ms, r.mean_ms, r.p95_ms, r.timed_runs, r.threads
            );
            Ok(())
        }
    }
}
