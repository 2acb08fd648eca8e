//! The deterministic training loop shared by every architecture: fixed batch
//! order per seed, polynomial lr decay, combined dice + cross-entropy loss,
//! per-epoch validation, and best-checkpoint retention.

pub mod loss;
pub mod optim;

pub use loss::{combined_loss, soft_dice_loss};
pub use optim::{poly_lr, Optimizer, OptimizerKind};

use crate::data::{augment, AugmentConfig, Dataset, SegmentationSample, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::eval::mean_foreground_dice;
use crate::models::{save_checkpoint, Model};
use crate::tensor::{Graph, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub poly_power: f64,
    pub w_dice: f64,
    pub w_ce: f64,
    pub seed: u64,
    /// Extra periodic checkpoints every N epochs (0 = best only).
    pub checkpoint_every: usize,
    pub augment: AugmentConfig,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            optimizer: OptimizerKind::adam(1e-3),
            poly_power: 0.9,
            w_dice: 1.0,
            w_ce: 1.0,
            seed: 0,
            checkpoint_every: 0,
            augment: AugmentConfig::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.w_dice < 0.0 || self.w_ce < 0.0 || (self.w_dice == 0.0 && self.w_ce == 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be nonnegative, not both zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

impl TrainHistory {
    /// CSV: epoch, lr, train_loss, val_loss, val_dice.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,lr,train_loss,val_loss,val_dice\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.8},{:.6},{:.6},{:.6}\n",
                e.epoch, e.lr, e.train_loss, e.val_loss, e.val_dice
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Stack samples into (B, C, H, W) input and flat labels.
pub fn collate(samples: &[&SegmentationSample]) -> Result<(Tensor<f32>, Arc<Vec<u32>>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let s = first.image.shape().to_vec();
    let (c, h, w) = (s[0], s[1], s[2]);
    let b = samples.len();
    let mut image = Tensor::zeros(&[b, c, h, w]);
    let mut labels = Vec::with_capacity(b * h * w);
    for (bi, sample) in samples.iter().enumerate() {
        if sample.image.shape() != s.as_slice() {
            return Err(Error::shape(
                "collate",
                format!("{s:?}"),
                format!("{:?}", sample.image.shape()),
            ));
        }
        image.data_mut()[bi * c * h * w..(bi + 1) * c * h * w]
            .copy_from_slice(sample.image.data());
        labels.extend(sample.label.data.iter().map(|&l| l as u32));
    }
    Ok((image, Arc::new(labels)))
}

/// Evaluation-mode loss + hard-argmax mean foreground dice over a dataset.
pub fn evaluate(
    model: &Model<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut dice_sum = 0.0;
    for sample in &data.samples {
        let (image, labels) = collate(&[sample])?;
        let mut g = Graph::<f32>::new().with_threads(cfg.threads).with_inference();
        let x = g.constant(image);
        let logits = model.forward(&mut g, x)?;
        let loss = combined_loss(
            &mut g,
            logits,
            labels.clone(),
            IGNORE_LABEL as u32,
            data.num_classes,
            cfg.w_dice,
            cfg.w_ce,
        )?;
        loss_sum += g.value(loss).item() as f64;
        let pred = argmax_labels(g.value(logits));
        dice_sum += mean_foreground_dice(&pred, &sample.label.data, data.num_classes)?;
    }
    let n = data.samples.len() as f64;
    Ok((loss_sum / n, dice_sum / n))
}

/// Per-pixel argmax over the class axis of (1, K, H, W) logits.
pub fn argmax_labels(logits: &Tensor<f32>) -> Vec<u16> {
    let s = logits.shape();
    let (k, h, w) = (s[1], s[2], s[3]);
    let mut out = vec![0u16; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_v = logits.at(&[0, 0, y, x]);
            for ki in 1..k {
                let v = logits.at(&[0, ki, y, x]);
                if v > best_v {
                    best_v = v;
                    best = ki;
                }
            }
            out[y * w + x] = best as u16;
        }
    }
    out
}

/// Train with a fixed batch order per seed. Returns the per-epoch history;
/// the best-validation-dice checkpoint (and optional periodic ones) land in
/// `out_dir` when given. Aborts with the failing step index on a non-finite
/// loss.
pub fn train_loop(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut opt = Optimizer::<f32>::new(cfg.optimizer);
    let base_lr = cfg.optimizer.base_lr();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut step_index = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = poly_lr(base_lr, epoch, cfg.epochs, cfg.poly_power);

        // Deterministic shuffle.
        let mut order: Vec<usize> = (0..train.samples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let augmented: Vec<SegmentationSample> = chunk
                .iter()
                .map(|&i| augment(&train.samples[i], &cfg.augment, &mut rng))
                .collect();
            let refs: Vec<&SegmentationSample> = augmented.iter().collect();
            let (image, labels) = collate(&refs)?;

            let mut g = Graph::<f32>::new()
                .with_train(true)
                .with_seed(cfg.seed ^ (step_index as u64).wrapping_mul(0x9e3779b97f4a7c15))
                .with_threads(cfg.threads);
            let x = g.constant(image);
            let logits = model.forward(&mut g, x)?;
            let loss = combined_loss(
                &mut g,
                logits,
                labels,
                IGNORE_LABEL as u32,
                train.num_classes,
                cfg.w_dice,
                cfg.w_ce,
            )?;
            let loss_value = g.value(loss).item() as f64;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { step: step_index });
            }
            let grads = g.backward(loss)?;
            opt.step(model, &grads, lr);
            loss_sum += loss_value;
            batches += 1;
            step_index += 1;
        }

        let (val_loss, val_dice) = evaluate(model, val, cfg)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            val_loss,
            val_dice,
        };
        let is_best = history.epochs.is_empty() || val_dice > history.best_val_dice;
        if is_best {
            history.best_epoch = epoch;
            history.best_val_dice = val_dice;
            if let Some(dir) = out_dir {
                save_checkpoint(model, &dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(model, &dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
        history.epochs.push(record);
    }
    Ok(history)
}
