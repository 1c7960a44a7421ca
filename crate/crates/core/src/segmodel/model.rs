use std::path::Path;

use candle_core::Tensor;
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::SegEpochMetrics;
use super::unet::{self, SegArch, UNet};
use crate::dataio::{BinaryMask, ImageSample};
use crate::error::{Error, Result};
use crate::metrics::MaskPredictor;
use crate::nn::{self, DEVICE};

const KIND: &str = "segmentation";
const PROBE_WINDOW: usize = 4;
const PROBE_TOLERANCE: f32 = 1e-5;

/// A trained segmenter: raster in, per-pixel microplastic probability out.
pub struct SegModel {
    pub(crate) net: UNet,
    pub(crate) vars: VarMap,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub history: Vec<SegEpochMetrics>,
}

/// Thresholded mask plus the probability map it came from, both at the
/// input image's resolution.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mask: BinaryMask,
    pub probabilities: Vec<f32>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegCheckpointMeta {
    pub kind: String,
    pub arch: SegArch,
    pub arch_hash: String,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub history: Vec<SegEpochMetrics>,
    pub probe: Vec<f32>,
}

/// `p >= threshold` becomes foreground.
pub fn threshold_map(id: &str, probs: &[f32], width: u32, height: u32, threshold: f64) -> Result<BinaryMask> {
    if probs.len() != (width * height) as usize {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for a {width}x{height} map",
            probs.len()
        )));
    }
    let data = probs.iter().map(|&p| u8::from(f64::from(p) >= threshold)).collect();
    BinaryMask::new(id, width, height, data)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {t}")))
    }
}

fn probe_input(arch: &SegArch) -> Result<Tensor> {
    let s = arch.image_size as usize;
    let data: Vec<f32> = (0..3 * s * s).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    Ok(Tensor::from_vec(data, (1, 3, s, s), &DEVICE)?)
}

impl SegModel {
    pub fn new(arch: SegArch, seed: u64) -> Result<Self> {
        let (net, vars) = unet::build(arch, seed)?;
        Ok(SegModel {
            net,
            vars,
            config_hash: String::new(),
            best_epoch: 0,
            best_val_dice: None,
            history: Vec::new(),
        })
    }

    pub fn arch(&self) -> SegArch {
        self.net.arch()
    }

    pub fn parameter_count(&self) -> usize {
        unet::parameter_count(&self.vars)
    }

    /// Short content hash of the weights; identifies the model in service responses.
    pub fn model_id(&self) -> String {
        let data = self.vars.data().lock().expect("varmap lock poisoned");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        let mut h = Sha256::new();
        h.update(self.arch().hash());
        for name in names {
            h.update(name.as_bytes());
            if let Ok(v) = data[name].as_tensor().flatten_all().and_then(|t| t.to_vec1::<f32>()) {
                for x in v {
                    h.update(x.to_le_bytes());
                }
            }
        }
        format!("unet-{}", &hex::encode(h.finalize())[..12])
    }

    /// Probability maps at model resolution for a batch already resized.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.net.probabilities(x)
    }

    /// Runs at model resolution, resamples the probability map back to the
    /// image size (bilinear), then thresholds.
    pub fn predict(&self, image: &ImageSample, threshold: f64) -> Result<Prediction> {
        check_threshold(threshold)?;
        let (w, h) = image.dimensions();
        let s = self.arch().image_size;
        let x = nn::images_to_tensor(&[&nn::resize_rgb(&image.pixels, s, s)])?;
        let p = self.forward(&x)?.flatten_all()?.to_vec1::<f32>()?;
        let probabilities = nn::resize_bilinear(&p, s, s, w, h);
        let mask = threshold_map(&format!("{}_pred", image.id), &probabilities, w, h, threshold)?;
        Ok(Prediction { mask, probabilities, width: w, height: h })
    }

    fn probe(&self) -> Result<Vec<f32>> {
        nn::probe_window(&self.forward(&probe_input(&self.arch())?)?, PROBE_WINDOW)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let arch = self.arch();
        let meta = SegCheckpointMeta {
            kind: KIND.into(),
            arch,
            arch_hash: arch.hash(),
            config_hash: self.config_hash.clone(),
            best_epoch: self.best_epoch,
            best_val_dice: self.best_val_dice,
            history: self.history.clone(),
            probe: self.probe()?,
        };
        nn::save_archive(path, &[("unet", &self.vars)], &meta)
    }

    /// Restores a saved model and replays its probe to confirm the weights.
    pub fn load(path: &Path, expected: Option<&SegArch>) -> Result<Self> {
        let archive = nn::load_archive::<SegCheckpointMeta>(path)?;
        let meta = archive.meta;
        if meta.kind != KIND {
            return Err(Error::CorruptCheckpoint(format!("{} is a {:?} checkpoint", path.display(), meta.kind)));
        }
        if meta.arch.hash() != meta.arch_hash {
            return Err(Error::CorruptCheckpoint("architecture hash does not match its description".into()));
        }
        if let Some(want) = expected {
            if want.hash() != meta.arch_hash {
                return Err(Error::ArchMismatch {
                    found: format!("{:?}", meta.arch),
                    expected: format!("{want:?}"),
                });
            }
        }
        let mut model = SegModel::new(meta.arch, 0)?;
        let tensors = archive
            .groups
            .get("unet")
            .ok_or_else(|| Error::CorruptCheckpoint("missing unet tensors".into()))?;
        nn::restore(&model.vars, tensors, "unet")?;
        let drift = nn::max_abs_diff(&model.probe()?, &meta.probe);
        if !(drift <= PROBE_TOLERANCE) {
            return Err(Error::CorruptCheckpoint(format!("probe outputs drift by {drift}")));
        }
        model.config_hash = meta.config_hash;
        model.best_epoch = meta.best_epoch;
        model.best_val_dice = meta.best_val_dice;
        model.history = meta.history;
        Ok(model)
    }
}

impl std::fmt::Debug for SegModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegModel")
            .field("arch", &self.arch())
            .field("best_epoch", &self.best_epoch)
            .field("best_val_dice", &self.best_val_dice)
            .finish_non_exhaustive()
    }
}

impl MaskPredictor for SegModel {
    fn predict_binary(&self, image: &ImageSample, threshold: f64) -> Result<BinaryMask> {
        Ok(self.predict(image, threshold)?.mask)
    }
}
