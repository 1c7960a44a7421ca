//! Microplastic segmentation with GAN-based synthetic augmentation.
//!
//! The pipeline: procedurally synthesized or on-disk cohorts ([`dataio`]),
//! rigid guiding-mask transforms and mask-guided compositing ([`maskops`]),
//! an inpainting GAN whose fakes only differ from the source inside the mask
//! ([`inpaint_gan`]), synthetic corpus generation ([`synthgen`]), a U-Net
//! segmenter with the baseline-vs-augmented experiment ([`segmodel`]),
//! pixel metrics ([`metrics`]) and a blinded reader-study engine
//! ([`readerstudy`]).

pub mod dataio;
pub mod error;
pub mod maskops;
pub mod inpaint_gan;
pub mod metrics;
mod nn;
pub mod readerstudy;
pub mod segmodel;
pub mod synthgen;
pub mod rng;

pub use error::{Error, Result};
