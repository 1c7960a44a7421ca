use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{segmentation_loss, SegLoss};
use super::model::SegModel;
use super::unet::{Backbone, SegArch};
use crate::dataio::{BinaryMask, Cohort, LabeledPair};
use crate::error::{Error, Result};
use crate::maskops::resize_nearest;
use crate::metrics::evaluate;
use crate::nn;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub backbone: Backbone,
    /// Overrides the backbone's default width.
    pub base_channels: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub image_size: u32,
    pub loss: SegLoss,
    /// Random horizontal and vertical flips of training samples.
    pub flips: bool,
    /// Threshold used for validation Dice.
    pub threshold: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            backbone: Backbone::SmallUnet,
            base_channels: None,
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            image_size: 64,
            loss: SegLoss::BceDice,
            flips: true,
            threshold: 0.5,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl SegTrainConfig {
    pub fn arch(&self) -> SegArch {
        SegArch {
            backbone: self.backbone,
            base_channels: self.base_channels.unwrap_or(self.backbone.default_width()),
            image_size: self.image_size,
        }
    }

    pub fn hash(&self) -> String {
        nn::config_hash(&SegTrainConfig { checkpoint_dir: None, ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold must lie in (0, 1)".into()));
        }
        self.arch().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub ids: Vec<String>,
    pub cohorts: Vec<Cohort>,
}

/// The selected model plus a record of what training touched.
pub struct SegTraining {
    pub model: SegModel,
    pub history: Vec<SegEpochMetrics>,
    pub batch_log: Vec<BatchRecord>,
}

impl SegTraining {
    /// Every cohort that contributed a training sample.
    pub fn cohorts_seen(&self) -> Vec<Cohort> {
        let mut v: Vec<Cohort> = self.batch_log.iter().flat_map(|b| b.cohorts.iter().copied()).collect();
        v.sort();
        v.dedup();
        v
    }
}

fn flip_mask(m: &BinaryMask, horizontal: bool, vertical: bool) -> BinaryMask {
    let (w, h) = m.dimensions();
    BinaryMask::from_fn(m.id.clone(), w, h, |x, y| {
        let sx = if horizontal { w - 1 - x } else { x };
        let sy = if vertical { h - 1 - y } else { y };
        m.get(sx, sy)
    })
}

fn flip_image(img: &RgbImage, horizontal: bool, vertical: bool) -> RgbImage {
    let mut out = img.clone();
    if horizontal {
        imageops::flip_horizontal_in_place(&mut out);
    }
    if vertical {
        imageops::flip_vertical_in_place(&mut out);
    }
    out
}

/// Minimizes the configured loss with Adam, keeps the weights with the best
/// validation Dice (earliest epoch on ties), and logs every batch's ids.
pub fn train_segmentation(train: &[LabeledPair], val: &[LabeledPair], cfg: &SegTrainConfig) -> Result<SegTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation set is empty".into()));
    }
    let s = cfg.image_size;
    let data: Vec<(RgbImage, BinaryMask)> = train
        .iter()
        .map(|p| (nn::resize_rgb(&p.image.pixels, s, s), resize_nearest(&p.mask, s, s)))
        .collect();

    let mut model = SegModel::new(cfg.arch(), cfg.seed)?;
    model.config_hash = cfg.hash();
    let mut opt = AdamW::new(
        model.vars.all_vars(),
        ParamsAdamW { lr: cfg.learning_rate, weight_decay: 0.0, ..Default::default() },
    )?;
    let log_path = cfg.checkpoint_dir.as_ref().map(|d| d.join("train_log.jsonl"));
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(p) = &log_path {
            let _ = fs::remove_file(p);
        }
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_log = Vec::new();
    let mut best: Option<(f64, usize, _)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::rng(cfg.seed, &[0x5e6, epoch as u64]));
        let mut aug = rng::rng(cfg.seed, &[0xf11, epoch as u64]);
        let (mut loss_sum, mut n_batches) = (0.0, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, mask) = &data[i];
                let (fh, fv) = if cfg.flips { (aug.random::<bool>(), aug.random::<bool>()) } else { (false, false) };
                images.push(flip_image(img, fh, fv));
                masks.push(flip_mask(mask, fh, fv));
            }
            let x = nn::images_to_tensor(&images.iter().collect::<Vec<_>>())?;
            let t = nn::masks_to_tensor(&masks.iter().collect::<Vec<_>>())?;
            let loss = segmentation_loss(&model.net.logits(&x)?, &t, cfg.loss)?;
            loss_sum += nn::ensure_finite("segmentation loss", nn::scalar(&loss)?)?;
            opt.backward_step(&loss)?;
            n_batches += 1;
            batch_log.push(BatchRecord {
                epoch,
                ids: chunk.iter().map(|&i| train[i].image.id.clone()).collect(),
                cohorts: chunk.iter().map(|&i| train[i].image.cohort).collect(),
            });
        }

        let val_dice = evaluate(&model, val, cfg.threshold)?.dataset_dice_mean;
        let metrics = SegEpochMetrics { epoch, train_loss: loss_sum / n_batches as f64, val_dice };
        tracing::info!(epoch, train_loss = metrics.train_loss, val_dice, "segmentation epoch");
        history.push(metrics);
        if let Some(p) = &log_path {
            append_log(p, &metrics)?;
        }
        if best.as_ref().is_none_or(|(d, _, _)| val_dice > *d) {
            best = Some((val_dice, epoch, nn::snapshot(&model.vars)?));
        }
    }

    let (best_dice, best_epoch, weights) = best.expect("at least one epoch ran");
    nn::restore(&model.vars, &weights, "unet")?;
    model.best_epoch = best_epoch;
    model.best_val_dice = Some(best_dice);
    model.history = history.clone();
    if let Some(dir) = &cfg.checkpoint_dir {
        model.save(&dir.join("best.ckpt"))?;
    }
    Ok(SegTraining { model, history, batch_log })
}

fn append_log(path: &Path, m: &SegEpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(m).expect("metrics serialize");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ImageSample;

    #[test]
    fn flips_agree_between_image_and_mask() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8, y as u8, 0]));
        let m = BinaryMask::from_fn("m", 5, 4, |x, y| x == 1 && y == 3);
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let fi = flip_image(&img, h, v);
            let fm = flip_mask(&m, h, v);
            let (x, y) = (0..5).flat_map(|x| (0..4).map(move |y| (x, y))).find(|&(x, y)| fm.get(x, y)).unwrap();
            assert_eq!(fi.get_pixel(x, y).0, [1, 3, 0]);
        }
    }

    fn pair(id: &str, cohort: Cohort) -> LabeledPair {
        LabeledPair {
            image: ImageSample::new(id, RgbImage::from_pixel(32, 32, image::Rgb([90, 90, 90])), cohort),
            mask: BinaryMask::zeros(id, 32, 32),
        }
    }

    #[test]
    fn empty_splits_are_rejected() {
        let cfg = SegTrainConfig { epochs: 1, image_size: 16, base_channels: Some(2), ..Default::default() };
        let p = [pair("a", Cohort::Cohort1)];
        assert_eq!(train_segmentation(&[], &p, &cfg).err().unwrap().code(), "EMPTY_SPLIT");
        assert_eq!(train_segmentation(&p, &[], &cfg).err().unwrap().code(), "EMPTY_SPLIT");
        let bad = SegTrainConfig { epochs: 0, ..cfg };
        assert_eq!(train_segmentation(&p, &p, &bad).err().unwrap().code(), "INVALID_ARGUMENT");
    }
}
