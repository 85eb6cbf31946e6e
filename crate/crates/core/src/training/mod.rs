//! Decoder-only fine-tuning on box prompts.

pub mod batches;
pub mod config;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use batches::{build_batches, BatchEntry, LoadedEntry};
pub use config::{LossChoice, OptimizerKind, TrainConfig};

use crate::dataio::resize::{map_box, mask_to_model, Direction};
use crate::dataio::DatasetManifest;
use crate::domain::{BinaryMask, ProbabilityMask};
use crate::error::{Error, Result};
use crate::evaluation::{binarize, dsc};
use crate::losses::LossKind;
use crate::model::checkpoint::{read_checkpoint, save_checkpoint};
use crate::model::upsample::{upsample, upsample_backward};
use crate::model::mask_decoder::{DecoderOutput, DecoderTape};
use crate::model::{BackboneBundle, FreezePolicy, ImageEmbedding, PromptEmbedding};
use crate::nn::{act, Adam, Module};

/// One image ready for decoder training: its frozen embedding, encoded box
/// prompts and model-space targets.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub id: String,
    pub embedding: ImageEmbedding,
    pub prompts: Vec<PromptEmbedding>,
    pub targets: Vec<BinaryMask>,
}

impl PreparedImage {
    pub fn new(bundle: &BackboneBundle, entry: &LoadedEntry) -> Result<Self> {
        let (embedding, transform) = bundle.embed(&entry.image)?;
        let prompts = entry
            .boxes
            .iter()
            .map(|&b| bundle.encode_box(map_box(b, &transform, Direction::Forward)))
            .collect::<Result<Vec<_>>>()?;
        let targets = entry.targets.iter().map(|t| mask_to_model(t, &transform)).collect();
        Ok(Self {
            id: entry.id.clone(),
            embedding,
            prompts,
            targets,
        })
    }

    pub fn size_bytes(&self) -> usize {
        self.embedding.size_bytes() + self.targets.iter().map(|t| t.as_slice().len()).sum::<usize>()
    }
}

/// Per-epoch training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub train_dsc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Everything needed to continue a run. The shuffling order is a pure
/// function of `(seed, epoch)`, so no generator state is stored.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub optimizer: Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    epoch: usize,
    step: u64,
    best_metric: Option<f64>,
    history: Vec<EpochRecord>,
    config: TrainConfig,
}

impl TrainState {
    pub fn new(bundle: &BackboneBundle, config: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            step: 0,
            best_metric: None,
            history: Vec::new(),
            optimizer: Adam::new(config.adam(), &bundle.mask_decoder),
        }
    }

    /// Loads decoder weights into `bundle` and returns the saved state.
    pub fn resume(path: &Path, bundle: &mut BackboneBundle, config: &TrainConfig) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        let record: StateRecord = match &ckpt.header.train_state {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::Checkpoint(format!("{} has no training state", path.display()))),
        };
        ckpt.apply_decoder(bundle)?;
        let mut optimizer = ckpt
            .restore_optimizer(bundle)?
            .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
        optimizer.config = config.adam();
        Ok(Self {
            epoch: record.epoch,
            step: record.step,
            best_metric: record.best_metric,
            history: record.history,
            optimizer,
        })
    }

    fn to_json(&self, config: &TrainConfig) -> serde_json::Value {
        serde_json::to_value(StateRecord {
            epoch: self.epoch,
            step: self.step,
            best_metric: self.best_metric,
            history: self.history.clone(),
            config: config.clone(),
        })
        .expect("state serializes")
    }
}

/// Mean loss and mean DSC (threshold 0.5, model space) of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub dsc: f64,
    pub instances: usize,
}

fn decoder_norm(bundle: &BackboneBundle) -> f64 {
    let mut sq = 0.0f64;
    bundle.mask_decoder.visit("", &mut |_, p| {
        sq += p.value.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
    });
    sq.sqrt()
}

/// Decodes one prompt and returns the supervised output as probabilities
/// at input resolution.
fn forward_instance(
    bundle: &BackboneBundle,
    embedding: &ImageEmbedding,
    prompt: &PromptEmbedding,
) -> Result<(DecoderOutput, DecoderTape, ProbabilityMask)> {
    let size = bundle.config.input_size;
    let m = bundle.config.mask_grid();
    let (out, tape) = bundle.decode_raw(embedding, prompt)?;
    let logits = Array2::from_shape_fn((m, m), |(r, c)| out.masks[[0, r * m + c]] as f64);
    let probs = upsample(&logits, size).mapv(act::sigmoid);
    Ok((out, tape, ProbabilityMask::from_array(probs)?))
}

/// Instance-mean loss of one image, without touching gradients.
pub fn image_loss(bundle: &BackboneBundle, image: &PreparedImage, loss: LossKind) -> Result<f64> {
    let mut sum = 0.0;
    for (prompt, target) in image.prompts.iter().zip(&image.targets) {
        let (_, _, p) = forward_instance(bundle, &image.embedding, prompt)?;
        sum += loss.evaluate(target, &p)?.value;
    }
    Ok(sum / image.prompts.len().max(1) as f64)
}

/// Clears the decoder gradients and fills them with those of the
/// instance-mean loss of one image.
pub fn image_gradients(bundle: &mut BackboneBundle, image: &PreparedImage, loss: LossKind) -> Result<StepOutcome> {
    bundle.mask_decoder.zero_grad();
    accumulate_image(bundle, image, loss, 1.0, 0)
}

/// Forward and backward for every instance of one image. Gradients of the
/// instance-mean loss, multiplied by `scale`, are added to the decoder.
fn accumulate_image(
    bundle: &mut BackboneBundle,
    image: &PreparedImage,
    loss: LossKind,
    scale: f64,
    step: u64,
) -> Result<StepOutcome> {
    let m = bundle.config.mask_grid();
    let n = image.prompts.len();
    let mut loss_sum = 0.0;
    let mut dsc_sum = 0.0;
    for (k, (prompt, target)) in image.prompts.iter().zip(&image.targets).enumerate() {
        let (out, tape, p) = forward_instance(bundle, &image.embedding, prompt)?;
        let value = loss.evaluate(target, &p)?;
        if !value.value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                param_norm: decoder_norm(bundle),
                detail: format!("image {} instance {k}", image.id),
            });
        }
        loss_sum += value.value;
        dsc_sum += dsc(&binarize(&p, 0.5)?, target)?;

        let w = scale / n as f64;
        let mut dp = value.gradient;
        ndarray::Zip::from(&mut dp).and(p.view()).for_each(|g, &q| *g *= w * q * (1.0 - q));
        let dlogits = upsample_backward(&dp, m, m);
        let mut dmasks = Array2::<f32>::zeros(out.masks.dim());
        for (dst, &src) in dmasks.row_mut(0).iter_mut().zip(dlogits.iter()) {
            *dst = src as f32;
        }
        bundle.mask_decoder.backward(tape, &dmasks);
    }
    Ok(StepOutcome {
        loss: loss_sum / n as f64,
        dsc: dsc_sum / n as f64,
        instances: n,
    })
}

/// One optimizer step over `images`: the loss of each image is the mean
/// over its instances, images are averaged, and only the decoder moves.
pub fn train_step(
    bundle: &mut BackboneBundle,
    images: &[&PreparedImage],
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<StepOutcome> {
    if bundle.policy != FreezePolicy::default() {
        return Err(Error::InvalidArgument("only decoder-only fine-tuning is supported".into()));
    }
    if images.is_empty() || images.iter().any(|i| i.prompts.is_empty()) {
        return Err(Error::InvalidArgument("a step needs at least one image with instances".into()));
    }
    bundle.mask_decoder.zero_grad();
    let loss = config.loss_kind();
    let scale = 1.0 / images.len() as f64;
    let mut total = StepOutcome {
        loss: 0.0,
        dsc: 0.0,
        instances: 0,
    };
    let mut dsc_weighted = 0.0;
    for image in images {
        let o = accumulate_image(bundle, image, loss, scale, state.step)?;
        total.loss += o.loss * scale;
        dsc_weighted += o.dsc * o.instances as f64;
        total.instances += o.instances;
    }
    total.dsc = dsc_weighted / total.instances as f64;
    state.optimizer.config = config.adam();
    state.optimizer.step(&mut bundle.mask_decoder);
    state.step += 1;
    Ok(total)
}

/// Where a run writes its outputs and what it starts from.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Checkpoints and `history.jsonl` go here; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Native checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Memory budget for prepared images kept across epochs.
    pub cache_bytes: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            resume: None,
            cache_bytes: 2 << 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub history: Vec<EpochRecord>,
    pub best_metric: Option<f64>,
    pub final_checkpoint: Option<PathBuf>,
}

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

fn open_history(dir: &Path, existing: &[EpochRecord]) -> Result<std::fs::File> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(HISTORY_FILE);
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in existing {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(f)
}

/// Runs `config.epochs` epochs of decoder-only fine-tuning on the train
/// split, keeping the best mean train DSC checkpoint.
pub fn finetune(
    manifest: &DatasetManifest,
    bundle: &mut BackboneBundle,
    config: &TrainConfig,
    options: &RunOptions,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let frozen_before = bundle.encoder_digest();
    let mut state = match &options.resume {
        Some(path) => TrainState::resume(path, bundle, config)?,
        None => TrainState::new(bundle, config),
    };
    let mut history_file = match &options.out_dir {
        Some(dir) => Some(open_history(dir, &state.history)?),
        None => None,
    };
    let started = Instant::now();
    let mut cache: HashMap<usize, PreparedImage> = HashMap::new();
    let mut cached_bytes = 0usize;

    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let entries = build_batches(manifest, config.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut dsc_sum = 0.0;
        let mut instances = 0usize;
        for chunk in entries.chunks(config.batch_images) {
            let mut owned = Vec::new();
            for e in chunk {
                if let Entry::Vacant(slot) = cache.entry(e.record) {
                    let prepared = PreparedImage::new(bundle, &e.load(manifest)?)?;
                    if cached_bytes + prepared.size_bytes() <= options.cache_bytes {
                        cached_bytes += prepared.size_bytes();
                        slot.insert(prepared);
                    } else {
                        owned.push((e.record, prepared));
                    }
                }
            }
            let images: Vec<&PreparedImage> = chunk
                .iter()
                .map(|e| {
                    cache
                        .get(&e.record)
                        .or_else(|| owned.iter().find(|(r, _)| *r == e.record).map(|(_, p)| p))
                        .expect("prepared above")
                })
                .collect();
            let o = train_step(bundle, &images, config, &mut state)?;
            loss_sum += o.loss;
            steps += 1;
            dsc_sum += o.dsc * o.instances as f64;
            instances += o.instances;
        }
        state.epoch += 1;
        let record = EpochRecord {
            epoch: state.epoch,
            step: state.step,
            loss: loss_sum / steps as f64,
            train_dsc: dsc_sum / instances as f64,
            wall_time: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {} step {} loss {:.5} train_dsc {:.4}",
            record.epoch,
            record.step,
            record.loss,
            record.train_dsc
        );
        let improved = state.best_metric.is_none_or(|b| record.train_dsc > b);
        if improved {
            state.best_metric = Some(record.train_dsc);
        }
        state.history.push(record.clone());

        if let Some(dir) = &options.out_dir {
            if let Some(f) = history_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(dir.join(HISTORY_FILE), e))?;
                f.flush().map_err(|e| Error::io(dir.join(HISTORY_FILE), e))?;
            }
            let state_json = Some(state.to_json(config));
            if improved {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), bundle, Some(&state.optimizer), state_json.clone())?;
            }
            if config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0 {
                save_checkpoint(&dir.join(epoch_checkpoint(state.epoch)), bundle, Some(&state.optimizer), state_json)?;
            }
        }
    }

    let final_checkpoint = match &options.out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            save_checkpoint(&path, bundle, Some(&state.optimizer), Some(state.to_json(config)))?;
            Some(path)
        }
        None => None,
    };
    if bundle.encoder_digest() != frozen_before {
        return Err(Error::FreezeViolation("encoder weights changed during fine-tuning".into()));
    }
    Ok(FinetuneOutcome {
        history: state.history,
        best_metric: state.best_metric,
        final_checkpoint,
    })
}
