//! Image/mask corpora: loading, manifests, splitting and the toy synthesizer.

mod io;
mod manifest;
mod sample;
mod split;
pub mod toy;

pub use io::{decode_upload, encode_png_gray, encode_png_rgb, load_image, load_mask, load_pair, save_image, save_mask};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, LabeledPair, ManifestEntry, Split, SCHEMA_VERSION};
pub(crate) use manifest::write_atomic;
pub use sample::{BinaryMask, Cohort, ImageSample, MASK_THRESHOLD, MIN_SIDE};
pub use split::{split_dataset, SplitRatios};
pub use toy::{synth_toy_corpus, synth_toy_images, write_toy_corpus, Background, Morphology, ShapeMix, ToyCorpusSpec, ToyImage, ToyShape};
