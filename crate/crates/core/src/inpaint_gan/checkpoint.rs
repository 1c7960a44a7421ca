use std::path::Path;

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{DiscriminatorContract, GanArch, GanModels, GeneratorContract};
use super::train::GanEpochMetrics;
use crate::error::{Error, Result};
use crate::nn::{self, DEVICE};
use crate::rng;

const KIND: &str = "inpaint_gan";
const PROBE_SEED: u64 = 0x9b0be;
const PROBE_WINDOW: usize = 4;
const PROBE_TOLERANCE: f32 = 1e-5;

/// Trained (or freshly initialized) networks plus training metadata.
pub struct GanCheckpoint {
    pub models: GanModels,
    pub epoch: usize,
    pub config_hash: String,
    pub history: Vec<GanEpochMetrics>,
    /// Image ids in the order they were fed, per epoch. Not persisted.
    pub batch_order: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpointMeta {
    pub kind: String,
    pub epoch: usize,
    pub config_hash: String,
    pub arch: GanArch,
    pub arch_hash: String,
    pub history: Vec<GanEpochMetrics>,
    pub probe: ProbeRecord,
}

/// 4x4 windows of both networks' outputs on a fixed seeded input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub generator: Vec<f32>,
    pub discriminator: Vec<f32>,
}

fn probe_inputs(arch: &GanArch) -> Result<(Tensor, Tensor)> {
    let s = arch.image_size as usize;
    let mut r = rng::rng(PROBE_SEED, &[]);
    let img: Vec<f32> = (0..3 * s * s).map(|_| r.random::<f32>()).collect();
    let mask: Vec<f32> = (0..s * s).map(|i| f32::from(u8::from(i % s < s / 2))).collect();
    Ok((
        Tensor::from_vec(img, (1, 3, s, s), &DEVICE)?,
        Tensor::from_vec(mask, (1, 1, s, s), &DEVICE)?,
    ))
}

fn run_probe(models: &GanModels) -> Result<ProbeRecord> {
    let (img, mask) = probe_inputs(&models.arch)?;
    let g = models.generator.forward_raw(&img, &mask)?;
    let d = models.discriminator.forward(&img)?;
    Ok(ProbeRecord {
        generator: nn::probe_window(&g, PROBE_WINDOW)?,
        discriminator: nn::probe_window(&d, PROBE_WINDOW)?,
    })
}

impl GanCheckpoint {
    pub fn meta(&self) -> Result<GanCheckpointMeta> {
        Ok(GanCheckpointMeta {
            kind: KIND.into(),
            epoch: self.epoch,
            config_hash: self.config_hash.clone(),
            arch: self.models.arch,
            arch_hash: self.models.arch.hash(),
            history: self.history.clone(),
            probe: run_probe(&self.models)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = self.meta()?;
        nn::save_archive(
            path,
            &[("generator", &self.models.gen_vars), ("discriminator", &self.models.disc_vars)],
            &meta,
        )
    }
}

/// Restores both networks. With `expected`, the stored architecture must match
/// it. The stored probe is replayed to confirm the weights load faithfully.
pub fn load_checkpoint(path: &Path, expected: Option<&GanArch>) -> Result<GanCheckpoint> {
    let archive = nn::load_archive::<GanCheckpointMeta>(path)?;
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
    let models = GanModels::new(meta.arch, 0)?;
    let group = |name: &str| {
        archive
            .groups
            .get(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing {name} tensors")))
    };
    nn::restore(&models.gen_vars, group("generator")?, "generator")?;
    nn::restore(&models.disc_vars, group("discriminator")?, "discriminator")?;

    let probe = run_probe(&models)?;
    let drift = nn::max_abs_diff(&probe.generator, &meta.probe.generator)
        .max(nn::max_abs_diff(&probe.discriminator, &meta.probe.discriminator));
    if !(drift <= PROBE_TOLERANCE) {
        return Err(Error::CorruptCheckpoint(format!("probe outputs drift by {drift}")));
    }
    Ok(GanCheckpoint {
        models,
        epoch: meta.epoch,
        config_hash: meta.config_hash,
        history: meta.history,
        batch_order: Vec::new(),
    })
}
