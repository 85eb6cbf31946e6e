//! Command-line interface: argument definitions and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataio::synthetic::{write_toy_dataset, ToyConfig};
use crate::dataio::{load_crack500, load_manifest, split_dataset, DatasetManifest};
use crate::domain::Split;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_dataset;
use crate::model::open_backbone;
use crate::profiler::{profile, ProfileOptions, DEVICE_ENV};
use crate::service::{convert_manifest, serve, ConvertOptions, ServiceConfig, CACHE_ENV};
use crate::training::{finetune, LossChoice, RunOptions, TrainConfig};

/// Exit status when a command finished but some inputs were skipped.
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pavesam", version, about = "Box-prompted pavement distress segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and write it as a manifest.
    Ingest(IngestArgs),
    /// Fine-tune the mask decoder.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Turn a box-annotated manifest into a mask dataset.
    Convert(ConvertArgs),
    /// Report parameters, FLOPs, model size and throughput.
    Profile(ProfileArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct IngestSource {
    /// Existing manifest file.
    #[arg(long, group = "source")]
    pub manifest: Option<PathBuf>,
    /// Crack500 root directory.
    #[arg(long, group = "source")]
    pub crack500: Option<PathBuf>,
    /// Generate a synthetic dataset into this directory.
    #[arg(long, group = "source")]
    pub toy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub source: IngestSource,
    /// Output manifest path.
    #[arg(long)]
    pub out: PathBuf,
    /// Re-split images with this train fraction.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of synthetic images (with --toy).
    #[arg(long, default_value_t = 20)]
    pub toy_images: usize,
    /// Side of the synthetic images in pixels (with --toy).
    #[arg(long, default_value_t = 64)]
    pub toy_size: usize,
    /// Largest number of distresses per synthetic image (with --toy).
    #[arg(long, default_value_t = 1)]
    pub toy_max_instances: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting backbone: "surrogate", a safetensors file or a native checkpoint.
    #[arg(long, default_value = "surrogate")]
    pub checkpoint: String,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: PathBuf,
    /// Native checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Memory budget in bytes for embeddings kept across epochs.
    #[arg(long)]
    pub cache_bytes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// dice_bce or focal_tversky.
    #[arg(long)]
    pub loss: Option<LossChoice>,
    #[arg(long)]
    pub tversky_alpha: Option<f64>,
    #[arg(long)]
    pub tversky_beta: Option<f64>,
    #[arg(long)]
    pub tversky_gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_images: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub record_wall_time: Option<bool>,
}

impl TrainArgs {
    pub fn resolve_config(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            epochs => epochs,
            learning_rate => learning_rate,
            beta1 => beta1,
            beta2 => beta2,
            eps => eps,
            loss => loss,
            tversky_alpha => tversky.alpha,
            tversky_beta => tversky.beta,
            tversky_gamma => tversky.gamma,
            seed => seed,
            batch_images => batch_images,
            checkpoint_every => checkpoint_every,
            record_wall_time => record_wall_time,
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "surrogate")]
    pub checkpoint: String,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Directory for metrics.jsonl and metrics.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Manifest whose instances carry at least a box.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "surrogate")]
    pub checkpoint: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Leave out instances whose predicted IoU score is below this.
    #[arg(long)]
    pub min_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, default_value = "surrogate")]
    pub checkpoint: String,
    /// Skip the throughput measurement.
    #[arg(long)]
    pub no_fps: bool,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Device label recorded in the report.
    #[arg(long, env = DEVICE_ENV)]
    pub device: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "surrogate")]
    pub checkpoint: String,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Embedding cache budget in bytes.
    #[arg(long, env = CACHE_ENV)]
    pub cache_bytes: Option<usize>,
    /// Largest accepted upload in pixels.
    #[arg(long)]
    pub max_pixels: Option<u64>,
    /// Compute device; only the CPU is supported.
    #[arg(long, env = DEVICE_ENV)]
    pub device: Option<String>,
}

fn check_device(device: &Option<String>) -> Result<()> {
    match device {
        Some(d) if !d.to_ascii_lowercase().starts_with("cpu") => {
            Err(Error::Config(format!("device `{d}` is not available; only cpu is supported")))
        }
        _ => Ok(()),
    }
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Convert(a) => convert(a),
        Command::Profile(a) => run_profile(a),
        Command::Serve(a) => run_serve(a),
    }
}

fn describe(m: &DatasetManifest) -> String {
    let (train, test) = m.split_counts();
    let classes: Vec<String> = m.class_counts().iter().map(|(c, n)| format!("{c} {n}")).collect();
    format!(
        "{} images ({train} train / {test} test); instances: {}",
        m.len(),
        if classes.is_empty() { "none".into() } else { classes.join(", ") }
    )
}

fn ingest(a: IngestArgs) -> Result<i32> {
    let mut manifest = if let Some(path) = &a.source.manifest {
        load_manifest(path)?
    } else if let Some(root) = &a.source.crack500 {
        load_crack500(root)?
    } else {
        let dir = a.source.toy.as_ref().expect("clap requires one source");
        let cfg = ToyConfig {
            n_images: a.toy_images,
            size: a.toy_size,
            max_instances: a.toy_max_instances,
            seed: a.seed,
            ..Default::default()
        };
        load_manifest(&write_toy_dataset(dir, &cfg)?)?
    };
    if let Some(f) = a.train_fraction {
        manifest = split_dataset(manifest, f, a.seed)?;
    }
    manifest.write_jsonl(&a.out)?;
    println!("{}", describe(&manifest));
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn train(a: TrainArgs) -> Result<i32> {
    let config = a.resolve_config()?;
    let manifest = load_manifest(&a.manifest)?;
    let mut bundle = open_backbone(&a.checkpoint)?;
    let mut options = RunOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume.clone(),
        ..Default::default()
    };
    if let Some(b) = a.cache_bytes {
        options.cache_bytes = b;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let config_path = a.out.join("run.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let outcome = finetune(&manifest, &mut bundle, &config, &options)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {} loss {:.5} train_dsc {:.4} (best {:.4})",
            last.epoch,
            last.loss,
            last.train_dsc,
            outcome.best_metric.unwrap_or(f64::NAN)
        );
    }
    if let Some(p) = outcome.final_checkpoint {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let manifest = load_manifest(&a.manifest)?;
    let bundle = open_backbone(&a.checkpoint)?;
    let report = evaluate_dataset(&bundle, &manifest, a.split, a.threshold)?;
    let (jsonl, table) = report.write(&a.out)?;
    print!("{}", report.to_table());
    println!("wrote {} and {}", jsonl.display(), table.display());
    Ok(if report.errors.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn convert(a: ConvertArgs) -> Result<i32> {
    let bundle = open_backbone(&a.checkpoint)?;
    let options = ConvertOptions {
        threshold: a.threshold,
        min_iou: a.min_iou,
    };
    let s = convert_manifest(&bundle, &a.manifest, &a.out, options)?;
    println!(
        "{} images, {} masks written, {} below the IoU filter, {} empty, {} errors",
        s.images,
        s.masks_written,
        s.filtered,
        s.empty,
        s.errors.len()
    );
    for e in &s.errors {
        eprintln!("skipped: {e}");
    }
    println!("wrote {}", s.manifest_path.display());
    Ok(if s.errors.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run_profile(a: ProfileArgs) -> Result<i32> {
    check_device(&a.device)?;
    let bundle = open_backbone(&a.checkpoint)?;
    let report = profile(
        &bundle,
        ProfileOptions {
            measure_fps: !a.no_fps,
            warmup: a.warmup,
            iters: a.iters,
        },
    )?;
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(0)
}

fn run_serve(a: ServeArgs) -> Result<i32> {
    check_device(&a.device)?;
    let bundle = open_backbone(&a.checkpoint)?;
    let mut config = ServiceConfig {
        host: a.host,
        port: a.port,
        ..Default::default()
    };
    if let Some(b) = a.cache_bytes {
        config.cache_bytes = b;
    }
    if let Some(p) = a.max_pixels {
        config.max_pixels = p;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Service(format!("cannot start runtime: {e}")))?;
    runtime.block_on(serve(bundle, config))?;
    Ok(0)
}
