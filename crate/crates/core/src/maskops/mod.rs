//! Binary-mask geometry and mask-guided compositing.

mod composite;
mod stats;
mod transform;

pub use composite::{composite, composite_pixels};
pub use stats::{foreground_stats, ForegroundStats};
pub use transform::{apply_transform, normalize_degrees, resize_nearest, sample_transform, MaskTransform, SampledTransform, TransformSampler};
