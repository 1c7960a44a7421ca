use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{self, bce_with_logits};

/// L1 between generator output and target restricted to the mask, divided by
/// the number of masked elements (at least 1). An empty mask gives exactly 0.
pub fn masked_l1(raw_gen: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = mask.broadcast_as(raw_gen.shape())?;
    let abs = ((raw_gen - target)?.abs()? * &m)?.sum_all()?;
    let count = nn::scalar(&m.sum_all()?)?.max(1.0);
    Ok(abs.affine(1.0 / count, 0.0)?)
}

/// `BCE(real -> 1) + BCE(fake -> 0)` on discriminator logits.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let real = bce_with_logits(d_real, &d_real.ones_like()?)?;
    let fake = bce_with_logits(d_fake, &d_fake.zeros_like()?)?;
    Ok((real + fake)?)
}

/// `BCE(fake -> 1) + recon_weight * masked_l1`.
pub fn generator_loss(
    d_fake: &Tensor,
    raw_gen: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    recon_weight: f64,
) -> Result<Tensor> {
    let adv = bce_with_logits(d_fake, &d_fake.ones_like()?)?;
    if recon_weight == 0.0 {
        return Ok(adv);
    }
    let rec = masked_l1(raw_gen, target, mask)?;
    Ok((adv + rec.affine(recon_weight, 0.0)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLossValues {
    pub loss_g: f64,
    pub loss_d: f64,
}

/// Both losses as plain numbers. Scores are discriminator logits (0 is a
/// realness probability of 0.5). Non-finite results are an error.
pub fn gan_losses(
    d_real: &Tensor,
    d_fake: &Tensor,
    raw_gen: &Tensor,
    target: &Tensor,
    mask: &Tensor,
    recon_weight: f64,
) -> Result<GanLossValues> {
    let loss_d = nn::scalar(&discriminator_loss(d_real, d_fake)?)?;
    let loss_g = nn::scalar(&generator_loss(d_fake, raw_gen, target, mask, recon_weight)?)?;
    Ok(GanLossValues {
        loss_g: nn::ensure_finite("loss_g", loss_g)?,
        loss_d: nn::ensure_finite("loss_d", loss_d)?,
    })
}

/// Fraction of patches the discriminator classifies correctly.
pub fn discriminator_accuracy(d_real: &Tensor, d_fake: &Tensor) -> Result<f64> {
    let real_ok = nn::scalar(&d_real.gt(0f32)?.to_dtype(candle_core::DType::F32)?.sum_all()?)?;
    let fake_ok = nn::scalar(&d_fake.lt(0f32)?.to_dtype(candle_core::DType::F32)?.sum_all()?)?;
    let total = (d_real.elem_count() + d_fake.elem_count()) as f64;
    Ok((real_ok + fake_ok) / total)
}
