use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::GanCheckpoint;
use super::loss::{discriminator_accuracy, discriminator_loss, generator_loss};
use super::model::{composite_tensor, DiscriminatorContract, GanArch, GanModels, GeneratorContract};
use crate::dataio::{BinaryMask, LabeledPair};
use crate::error::{Error, Result};
use crate::maskops::resize_nearest;
use crate::nn;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    pub recon_weight: f64,
    pub image_size: u32,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Per-epoch checkpoints and the JSON-lines log go here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate_g: 2e-4,
            learning_rate_d: 2e-4,
            recon_weight: 10.0,
            image_size: 64,
            base_channels: 32,
            residual_blocks: 2,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl GanTrainConfig {
    pub fn arch(&self) -> GanArch {
        GanArch {
            image_size: self.image_size,
            base_channels: self.base_channels,
            residual_blocks: self.residual_blocks,
        }
    }

    /// Hash of everything that affects the trained weights.
    pub fn hash(&self) -> String {
        nn::config_hash(&GanTrainConfig { checkpoint_dir: None, ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate_g > 0.0 && self.learning_rate_d > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if !(self.recon_weight >= 0.0) {
            return Err(Error::InvalidArgument("recon_weight must be non-negative".into()));
        }
        self.arch().validate()
    }

    fn adam(&self, lr: f64) -> ParamsAdamW {
        ParamsAdamW {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpochMetrics {
    pub epoch: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub d_accuracy: f64,
}

/// What the discriminator was shown as "fake" for one batch, next to the sources.
pub struct BatchAudit<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub ids: &'a [String],
    pub sources: &'a [RgbImage],
    pub masks: &'a [BinaryMask],
    pub fakes: &'a [RgbImage],
}

pub fn train_gan(pairs: &[LabeledPair], cfg: &GanTrainConfig) -> Result<GanCheckpoint> {
    train_gan_with(pairs, cfg, &mut |_| {})
}

/// Adversarial training with alternating discriminator/generator steps. Every
/// batch's composited fakes are checked against their sources outside the
/// mask and handed to `audit`.
pub fn train_gan_with(
    pairs: &[LabeledPair],
    cfg: &GanTrainConfig,
    audit: &mut dyn FnMut(&BatchAudit),
) -> Result<GanCheckpoint> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "GAN training needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let size = cfg.image_size;
    let data: Vec<(String, RgbImage, BinaryMask)> = pairs
        .iter()
        .map(|p| {
            (
                p.image.id.clone(),
                nn::resize_rgb(&p.image.pixels, size, size),
                resize_nearest(&p.mask, size, size),
            )
        })
        .collect();

    let models = GanModels::new(cfg.arch(), cfg.seed)?;
    let mut opt_g = AdamW::new(models.gen_vars.all_vars(), cfg.adam(cfg.learning_rate_g))?;
    let mut opt_d = AdamW::new(models.disc_vars.all_vars(), cfg.adam(cfg.learning_rate_d))?;
    let mut ckpt = GanCheckpoint {
        models,
        epoch: 0,
        config_hash: cfg.hash(),
        history: Vec::new(),
        batch_order: Vec::new(),
    };
    let log_path = cfg.checkpoint_dir.as_ref().map(|d| d.join("train_log.jsonl"));
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(p) = &log_path {
            let _ = fs::remove_file(p);
        }
        save_epoch(&ckpt, dir)?;
    }

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::rng(cfg.seed, &[0x6a7, epoch as u64]));
        let mut sums = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        let mut epoch_ids = Vec::with_capacity(data.len());

        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let ids: Vec<String> = chunk.iter().map(|&i| data[i].0.clone()).collect();
            let sources: Vec<RgbImage> = chunk.iter().map(|&i| data[i].1.clone()).collect();
            let masks: Vec<BinaryMask> = chunk.iter().map(|&i| data[i].2.clone()).collect();
            let x = nn::images_to_tensor(&sources.iter().collect::<Vec<_>>())?;
            let m = nn::masks_to_tensor(&masks.iter().collect::<Vec<_>>())?;

            let raw = ckpt.models.generator.forward_raw(&x, &m)?;
            let fake = composite_tensor(&raw, &x, &m)?;

            let d_real = ckpt.models.discriminator.forward(&x)?;
            let d_fake = ckpt.models.discriminator.forward(&fake.detach())?;
            let loss_d = discriminator_loss(&d_real, &d_fake)?;
            let d_acc = discriminator_accuracy(&d_real, &d_fake)?;
            let loss_d_value = nn::ensure_finite("loss_d", nn::scalar(&loss_d)?)?;
            opt_d.backward_step(&loss_d)?;

            let d_fake_g = ckpt.models.discriminator.forward(&fake)?;
            let loss_g = generator_loss(&d_fake_g, &raw, &x, &m, cfg.recon_weight)?;
            let loss_g_value = nn::ensure_finite("loss_g", nn::scalar(&loss_g)?)?;
            opt_g.backward_step(&loss_g)?;

            let fakes = nn::tensor_to_images(&fake)?;
            let violations: usize = fakes
                .iter()
                .zip(&sources)
                .zip(&masks)
                .map(|((f, s), mk)| unmasked_differences(f, s, mk))
                .sum();
            if violations > 0 {
                return Err(Error::CompositionViolation(violations));
            }
            audit(&BatchAudit {
                epoch,
                batch,
                ids: &ids,
                sources: &sources,
                masks: &masks,
                fakes: &fakes,
            });

            sums.0 += loss_g_value;
            sums.1 += loss_d_value;
            sums.2 += d_acc;
            n_batches += 1;
            epoch_ids.extend(ids);
        }

        let n = n_batches as f64;
        let metrics = GanEpochMetrics {
            epoch,
            loss_g: sums.0 / n,
            loss_d: sums.1 / n,
            d_accuracy: sums.2 / n,
        };
        tracing::info!(epoch, loss_g = metrics.loss_g, loss_d = metrics.loss_d, d_accuracy = metrics.d_accuracy, "gan epoch");
        ckpt.epoch = epoch;
        ckpt.history.push(metrics);
        ckpt.batch_order.push(epoch_ids);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_epoch(&ckpt, dir)?;
            if let Some(p) = &log_path {
                append_log(p, &metrics)?;
            }
        }
    }
    Ok(ckpt)
}

/// Number of pixels outside the mask where `fake` differs from `source`.
pub fn unmasked_differences(fake: &RgbImage, source: &RgbImage, mask: &BinaryMask) -> usize {
    fake.chunks_exact(3)
        .zip(source.chunks_exact(3))
        .zip(mask.as_slice())
        .filter(|((f, s), &m)| m == 0 && f != s)
        .count()
}

fn save_epoch(ckpt: &GanCheckpoint, dir: &Path) -> Result<()> {
    let path = dir.join(format!("epoch_{:04}.ckpt", ckpt.epoch));
    ckpt.save(&path)?;
    let latest = dir.join("latest.ckpt");
    fs::copy(&path, &latest).map_err(|e| Error::io(&latest, e))?;
    Ok(())
}

fn append_log(path: &Path, m: &GanEpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(m).expect("metrics serialize");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
