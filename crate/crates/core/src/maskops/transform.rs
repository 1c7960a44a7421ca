use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::BinaryMask;
use crate::error::{Error, Result};
use crate::rng;

/// Rigid transform of a guiding mask: rotation about the mask center by
/// `theta` degrees (counter-clockwise as displayed), then an integer shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTransform {
    pub dx: i32,
    pub dy: i32,
    pub theta: f64,
}

impl MaskTransform {
    pub const IDENTITY: MaskTransform = MaskTransform { dx: 0, dy: 0, theta: 0.0 };

    pub fn new(dx: i32, dy: i32, theta: f64) -> Self {
        MaskTransform {
            dx,
            dy,
            theta: normalize_degrees(theta),
        }
    }
}

/// Maps any angle into [0, 360).
pub fn normalize_degrees(theta: f64) -> f64 {
    let t = theta.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if t >= 360.0 {
        0.0
    } else {
        t
    }
}

/// Rotate-then-shift with nearest-neighbour sampling. Pixels sampled from
/// outside the source frame are 0.
pub fn apply_transform(mask: &BinaryMask, t: &MaskTransform) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let theta = normalize_degrees(t.theta);
    let rad = theta.to_radians();
    let (sin, cos) = rad.sin_cos();
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let (wi, hi) = (i64::from(w), i64::from(h));

    BinaryMask::from_fn(mask.id.clone(), w, h, |x, y| {
        let u = f64::from(x) - f64::from(t.dx) - cx;
        let v = f64::from(y) - f64::from(t.dy) - cy;
        let sx = (cx + u * cos - v * sin).round() as i64;
        let sy = (cy + u * sin + v * cos).round() as i64;
        (0..wi).contains(&sx) && (0..hi).contains(&sy) && mask.get(sx as u32, sy as u32)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSampler {
    pub max_shift_fraction: f64,
    pub min_foreground_pixels: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for TransformSampler {
    fn default() -> Self {
        TransformSampler {
            max_shift_fraction: 0.25,
            min_foreground_pixels: 16,
            max_attempts: 10,
            seed: 0,
        }
    }
}

impl TransformSampler {
    pub fn with_seed(self, seed: u64) -> Self {
        TransformSampler { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_shift_fraction > 0.0 && self.max_shift_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_shift_fraction must be in (0, 1], got {}",
                self.max_shift_fraction
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTransform {
    pub transform: MaskTransform,
    pub mask: BinaryMask,
    /// 1-based index of the accepted draw.
    pub attempts: usize,
}

/// Draws random transforms until the result keeps at least
/// `min_foreground_pixels`, giving up after `max_attempts`.
pub fn sample_transform(sampler: &TransformSampler, mask: &BinaryMask) -> Result<SampledTransform> {
    sampler.validate()?;
    let required = sampler.min_foreground_pixels;
    if mask.count_ones() == 0 {
        return Err(Error::DegenerateMask { attempts: 0, best: 0, required });
    }
    let mut rng = rng::rng(sampler.seed, &[]);
    let max_dx = (sampler.max_shift_fraction * f64::from(mask.width())).floor() as i32;
    let max_dy = (sampler.max_shift_fraction * f64::from(mask.height())).floor() as i32;
    let mut best = 0;
    for attempt in 1..=sampler.max_attempts {
        let t = MaskTransform::new(
            rng.random_range(-max_dx..=max_dx),
            rng.random_range(-max_dy..=max_dy),
            rng.random_range(0.0..360.0),
        );
        let out = apply_transform(mask, &t);
        let count = out.count_ones();
        if count >= required {
            return Ok(SampledTransform { transform: t, mask: out, attempts: attempt });
        }
        best = best.max(count);
    }
    Err(Error::DegenerateMask {
        attempts: sampler.max_attempts,
        best,
        required,
    })
}

/// Nearest-neighbour resize (pixel-center aligned).
pub fn resize_nearest(mask: &BinaryMask, width: u32, height: u32) -> BinaryMask {
    if mask.dimensions() == (width, height) {
        return mask.clone();
    }
    let (sw, sh) = mask.dimensions();
    let mut out = BinaryMask::from_fn(mask.id.clone(), width, height, |x, y| {
        let sx = ((f64::from(x) + 0.5) * f64::from(sw) / f64::from(width)).floor() as u32;
        let sy = ((f64::from(y) + 0.5) * f64::from(sh) / f64::from(height)).floor() as u32;
        mask.get(sx.min(sw - 1), sy.min(sh - 1))
    });
    out.paired_image_id = mask.paired_image_id.clone();
    out
}
