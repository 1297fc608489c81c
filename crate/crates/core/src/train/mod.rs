//! Training recipe: mean cross-entropy plus L2 on the dense weights,
//! Adam, exponential learning-rate decay, per-epoch reshuffling, and
//! best-on-validation model selection.

mod adam;
mod checkpoint;
mod gradient;
mod loss;
mod schedule;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{config_fingerprint, Checkpoint, FORMAT as CHECKPOINT_FORMAT};
pub use gradient::{objective, objective_and_gradient, sample_backprop, Sample};
pub use loss::{add_l2_gradient, cross_entropy, l2_penalty};
pub use schedule::LrSchedule;

use crate::classes::SpeedClassMap;
use crate::dataset::Examples;
use crate::error::{Error, Result};
use crate::eval::{predict_examples, within_k_accuracy, Decoder, PredictionRecord};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{init_parameters, MetadataStats, ModelConfig, ModelParameters};
use crate::rng;

pub(crate) use checkpoint::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    /// λ in `λ Σ w²`.
    pub l2_scale: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 15,
            schedule: LrSchedule::default(),
            l2_scale: 5e-5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.schedule.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.schedule.decay_factor > 0.0 && self.schedule.decay_epochs > 0.0) {
            return Err(Error::Config("decay_factor and decay_epochs must be positive".into()));
        }
        if !(self.l2_scale >= 0.0) {
            return Err(Error::Config("l2_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Rate used for the epoch's last step.
    pub lr: f64,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    pub val_within5: f64,
}

pub fn write_log_csv(rows: &[EpochLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,step,lr,train_loss,val_within5")?;
    for r in rows {
        writeln!(out, "{},{},{:e},{},{}", r.epoch, r.step, r.lr, r.train_loss, r.val_within5)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-on-validation parameters.
    pub checkpoint: Checkpoint,
    /// Parameters after the last step.
    pub final_params: ModelParameters<f32>,
    pub log: Vec<EpochLog>,
}

/// Training data prepared for the optimizer.
pub struct Prepared {
    pub class_map: SpeedClassMap,
    pub stats: MetadataStats,
    pub train: Examples,
    pub train_labels: Vec<usize>,
    pub val: Examples,
    pub split_digest: String,
}

impl Prepared {
    /// Loads train and validation splits; class map and metadata stats come
    /// from the training split alone.
    pub fn from_manifest(manifest: &DatasetManifest, model: &ModelConfig) -> Result<Self> {
        for split in [Split::Train, Split::Val] {
            if manifest.count(split) == 0 {
                return Err(Error::domain(format!("manifest has no {split} split")));
            }
        }
        let with_chips = model.variant.uses_image();
        let train = Examples::load(manifest, Split::Train, with_chips)?;
        let val = Examples::load(manifest, Split::Val, with_chips)?;
        let labels: Vec<u32> = train.segments.iter().map(|s| s.freeflow_mph).collect();
        let class_map = SpeedClassMap::build(&labels)?;
        let train_labels = labels
            .iter()
            .map(|&l| class_map.speed_to_class(l).expect("built from these labels"))
            .collect();
        let stats = MetadataStats::from_metadata(train.segments.iter().map(|s| &s.metadata))?;
        Ok(Prepared {
            class_map,
            stats,
            train,
            train_labels,
            val,
            split_digest: split_digest(manifest),
        })
    }
}

/// Digest of which segment ids sit in which split.
pub fn split_digest(manifest: &DatasetManifest) -> String {
    let mut lines: Vec<String> = manifest
        .records
        .iter()
        .filter_map(|r| r.split.map(|s| format!("{s}\t{}", r.segment.id)))
        .collect();
    lines.sort();
    sha256_hex(lines.join("\n").as_bytes())
}

/// Trains one variant. `model.classes` is filled from the training labels;
/// a nonzero value that disagrees is an error.
pub fn train(manifest: &DatasetManifest, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = Prepared::from_manifest(manifest, model)?;
    train_prepared(&data, model, config)
}

pub fn train_prepared(data: &Prepared, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = model.clone();
    if model.classes != 0 && model.classes != data.class_map.len() {
        return Err(Error::mismatch(format!(
            "model configured for {} classes but training labels give {}",
            model.classes,
            data.class_map.len()
        )));
    }
    model.classes = data.class_map.len();
    model.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::domain("train and val splits must be nonempty"));
    }
    if let Some(chips) = &data.train.chips {
        if let Some(bad) = chips.iter().position(|c| c.width() as usize != model.input_px || c.height() as usize != model.input_px) {
            return Err(Error::mismatch(format!(
                "chip of {} is {}x{} but input_px is {}",
                data.train.segments[bad].id,
                chips[bad].width(),
                chips[bad].height(),
                model.input_px
            )));
        }
    }

    let mut params: ModelParameters<f32> = init_parameters(&model, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = rng::stream(config.seed, rng::SHUFFLE);
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParameters<f32>)> = None;
    let started = Instant::now();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = config.schedule.at(epoch as f64);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            lr = config
                .schedule
                .at(epoch as f64 + b as f64 / steps_per_epoch as f64);
            let (loss, grads) = objective_and_gradient(
                &params,
                &model,
                batch.len(),
                |i| {
                    let idx = batch[i];
                    Ok(data.train.sample(idx, &data.stats, model.metadata_scaling, data.train_labels[idx]))
                },
                config.l2_scale,
            )?;
            adam_step(&mut params, &grads, &mut state, lr, &config.adam, model.freeze_backbone)?;
            loss_sum += f64::from(loss);
            step += 1;
            if step % 50 == 0 {
                log::debug!("epoch {epoch} step {step} loss {loss:.4} lr {lr:.3e}");
            }
        }
        let preds = predict_examples(&params, &model, &data.class_map, &data.stats, &data.val, Decoder::Argmax)?;
        let val = within_k_accuracy(&preds, 5)?;
        let row = EpochLog {
            epoch,
            step,
            lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_within5: val,
        };
        log::info!(
            "{} epoch {}/{}: loss {:.4}, val within-5 {:.4} ({:.0}s)",
            model.variant,
            epoch + 1,
            config.epochs,
            row.train_loss,
            val,
            started.elapsed().as_secs_f64()
        );
        log.push(row);
        if best.as_ref().is_none_or(|(score, _, _)| val > *score) {
            best = Some((val, epoch, params.clone()));
        }
    }

    let (val_within5, epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            train: config.clone(),
            class_map: data.class_map.clone(),
            metadata_stats: data.stats,
            epoch,
            val_within5,
            split_digest: data.split_digest.clone(),
            params: best_params,
        },
        final_params: params,
        log,
    })
}

/// Shorthand for prediction records on a split from a checkpoint.
pub fn evaluate_split(checkpoint: &Checkpoint, manifest: &DatasetManifest, split: Split, decoder: Decoder) -> Result<Vec<PredictionRecord>> {
    let examples = Examples::load(manifest, split, checkpoint.model.variant.uses_image())?;
    predict_examples(
        &checkpoint.params,
        &checkpoint.model,
        &checkpoint.class_map,
        &checkpoint.metadata_stats,
        &examples,
        decoder,
    )
}
