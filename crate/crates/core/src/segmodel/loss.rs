use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::bce_with_logits;

/// Additive smoothing of the soft-Dice ratio; keeps empty masks well defined.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegLoss {
    BceDice,
    Bce,
}

/// Mean over the batch of `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)` with
/// `p = sigmoid(logits)`, each image summed over its own pixels.
pub fn soft_dice_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let p = candle_nn::ops::sigmoid(logits)?.flatten_from(1)?;
    let t = target.flatten_from(1)?;
    let inter = (&p * &t)?.sum(D::Minus1)?;
    let denom = (p.sum(D::Minus1)? + t.sum(D::Minus1)?)?.affine(1.0, DICE_SMOOTH)?;
    let ratio = (inter.affine(2.0, DICE_SMOOTH)? / denom)?;
    Ok(ratio.affine(-1.0, 1.0)?.mean_all()?)
}

/// Training objective on logits `[B, 1, H, W]` against 0/1 targets.
pub fn segmentation_loss(logits: &Tensor, target: &Tensor, kind: SegLoss) -> Result<Tensor> {
    let bce = bce_with_logits(logits, target)?;
    Ok(match kind {
        SegLoss::Bce => bce,
        SegLoss::BceDice => (bce + soft_dice_loss(logits, target)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{scalar, DEVICE};
    use candle_core::Var;

    /// Straight-line scalar version of BCE + soft Dice for one image.
    fn reference(logits: &[f64], target: &[f64]) -> f64 {
        let n = logits.len() as f64;
        let mut bce = 0.0;
        let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
        for (&x, &t) in logits.iter().zip(target) {
            let p = 1.0 / (1.0 + (-x).exp());
            bce += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            inter += p * t;
            sp += p;
            st += t;
        }
        bce / n + 1.0 - (2.0 * inter + 1.0) / (sp + st + 1.0)
    }

    #[test]
    fn matches_scalar_reference() {
        let logits: Vec<f64> = (0..16).map(|i| (f64::from(i) - 7.5) * 0.3).collect();
        let target: Vec<f64> = (0..16).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let l = Tensor::from_vec(logits.clone(), (1, 1, 4, 4), &DEVICE).unwrap();
        let t = Tensor::from_vec(target.clone(), (1, 1, 4, 4), &DEVICE).unwrap();
        let v = scalar(&segmentation_loss(&l, &t, SegLoss::BceDice).unwrap()).unwrap();
        assert!((v - reference(&logits, &target)).abs() < 1e-12);
    }

    #[test]
    fn empty_target_and_confident_background_is_near_zero() {
        let l = Tensor::full(-30f64, (2, 1, 4, 4), &DEVICE).unwrap();
        let t = l.zeros_like().unwrap();
        let v = scalar(&segmentation_loss(&l, &t, SegLoss::BceDice).unwrap()).unwrap();
        assert!(v < 1e-10, "{v}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Vec<f64> = (0..16).map(|i| ((f64::from(i) * 1.7).sin()) * 2.0).collect();
        let target: Vec<f64> = (0..16).map(|i| f64::from(u8::from(i % 5 < 2))).collect();
        let var = Var::from_vec(logits.clone(), (1, 1, 4, 4), &DEVICE).unwrap();
        let t = Tensor::from_vec(target.clone(), (1, 1, 4, 4), &DEVICE).unwrap();
        let loss = segmentation_loss(var.as_tensor(), &t, SegLoss::BceDice).unwrap();
        let g = loss.backward().unwrap().get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        for i in 0..16 {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (reference(&plus, &target) - reference(&minus, &target)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-12);
            assert!(rel < 1e-3, "element {i}: autograd {} vs fd {fd}", g[i]);
        }
    }
}
