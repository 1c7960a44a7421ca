//! Synthetic corpus generation: plastic-free images, randomly chosen and
//! randomly transformed guiding masks, and the trained generator.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    save_image, save_mask, write_manifest, BinaryMask, Cohort, DatasetManifest, ImageSample, ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::inpaint_gan::{generator_composited_forward, load_checkpoint, GeneratorContract};
use crate::maskops::{resize_nearest, sample_transform, MaskTransform, TransformSampler};
use crate::rng;

/// Guiding masks tried per output sample before giving up.
const MAX_GUIDE_RETRIES: usize = 10;

#[derive(Debug, Clone)]
pub struct SynthJob {
    pub checkpoint: PathBuf,
    pub clean_images: DatasetManifest,
    pub guiding_masks: Vec<BinaryMask>,
    pub per_image_count: usize,
    pub sampler: TransformSampler,
    pub output_dir: PathBuf,
    pub seed: u64,
}

/// How one synthetic sample was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub clean_id: String,
    pub guiding_mask_id: String,
    pub transform: MaskTransform,
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: ImageSample,
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

/// One synthetic pair. The returned mask is the transformed guiding mask and
/// is the sample's exact label.
pub fn generate_sample(
    gen: &dyn GeneratorContract,
    clean: &ImageSample,
    guiding: &BinaryMask,
    sampler: &TransformSampler,
) -> Result<(ImageSample, BinaryMask, MaskTransform)> {
    let (w, h) = clean.dimensions();
    let guide = resize_nearest(guiding, w, h);
    let sampled = sample_transform(sampler, &guide)?;
    let image = generator_composited_forward(gen, clean, &sampled.mask)?;
    Ok((image, sampled.mask, sampled.transform))
}

/// Samples for clean image `index`. Depends only on `(seed, index)`, so the
/// result is the same whichever worker runs it.
fn samples_for_image(
    gen: &dyn GeneratorContract,
    clean: &ImageSample,
    index: usize,
    guides: &[BinaryMask],
    per_image_count: usize,
    sampler: &TransformSampler,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    let mut out = Vec::with_capacity(per_image_count);
    for k in 0..per_image_count {
        let mut pick = rng::rng(seed, &[index as u64, k as u64]);
        let mut last_err = None;
        for retry in 0..MAX_GUIDE_RETRIES {
            let guide = &guides[pick.random_range(0..guides.len())];
            let s = sampler.with_seed(rng::derive_seed(seed, &[index as u64, k as u64, retry as u64]));
            match generate_sample(gen, clean, guide, &s) {
                Ok((mut image, mut mask, transform)) => {
                    let sample_id = format!("syn_{}_{k:02}", clean.id);
                    image.id = sample_id.clone();
                    image.cohort = Cohort::Synthetic;
                    mask.id = format!("{sample_id}_mask");
                    mask.paired_image_id = Some(sample_id.clone());
                    out.push(SyntheticSample {
                        image,
                        mask,
                        provenance: Provenance {
                            sample_id,
                            clean_id: clean.id.clone(),
                            guiding_mask_id: guide.id.clone(),
                            transform,
                        },
                    });
                    last_err = None;
                    break;
                }
                Err(e @ Error::DegenerateMask { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    Ok(out)
}

/// In-memory corpus generation.
pub fn generate_samples(
    gen: &dyn GeneratorContract,
    clean: &[ImageSample],
    guides: &[BinaryMask],
    per_image_count: usize,
    sampler: &TransformSampler,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if guides.is_empty() {
        return Err(Error::InvalidArgument("at least one guiding mask is required".into()));
    }
    if per_image_count == 0 {
        return Err(Error::InvalidArgument("per_image_count must be at least 1".into()));
    }
    if clean.is_empty() {
        return Err(Error::EmptyInput("no clean images".into()));
    }
    sampler.validate()?;
    let nested = clean
        .par_iter()
        .enumerate()
        .map(|(i, img)| samples_for_image(gen, img, i, guides, per_image_count, sampler, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Runs a job end to end and writes `images/`, `masks/`, `manifest.json` and
/// `provenance.jsonl` under `output_dir`. Output is staged in a sibling
/// directory and only moved into place on success.
pub fn generate_corpus(job: &SynthJob) -> Result<DatasetManifest> {
    let ckpt = load_checkpoint(&job.checkpoint, None)?;
    let clean = job.clean_images.load_images(&job.clean_images.entries)?;
    let samples = generate_samples(
        &ckpt.models.generator,
        &clean,
        &job.guiding_masks,
        job.per_image_count,
        &job.sampler,
        job.seed,
    )?;

    let staging = staging_dir(&job.output_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = write_corpus(&samples, &staging, job.seed).and_then(|_| {
        if job.output_dir.exists() {
            fs::remove_dir_all(&job.output_dir).map_err(|e| Error::io(&job.output_dir, e))?;
        }
        fs::rename(&staging, &job.output_dir).map_err(|e| Error::io(&job.output_dir, e))
    });
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    crate::dataio::read_manifest(&job.output_dir.join("manifest.json"))
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    out.with_file_name(format!(".{name}.partial"))
}

/// Writes samples to `dir` in the corpus layout.
pub fn write_corpus(samples: &[SyntheticSample], dir: &Path, seed: u64) -> Result<DatasetManifest> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let prov_path = dir.join("provenance.jsonl");
    let mut prov = BufWriter::new(File::create(&prov_path).map_err(|e| Error::io(&prov_path, e))?);
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let image_rel = format!("images/{}.png", s.image.id);
        let mask_rel = format!("masks/{}.png", s.image.id);
        save_image(&s.image.pixels, &dir.join(&image_rel))?;
        save_mask(&s.mask, &dir.join(&mask_rel))?;
        let line = serde_json::to_string(&s.provenance).expect("provenance serializes");
        writeln!(prov, "{line}").map_err(|e| Error::io(&prov_path, e))?;
        entries.push(ManifestEntry {
            image: image_rel,
            mask: Some(mask_rel),
            cohort: Cohort::Synthetic,
            split: Split::Unsplit,
        });
    }
    prov.flush().map_err(|e| Error::io(&prov_path, e))?;
    let manifest = DatasetManifest::new(dir, seed, entries);
    write_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

pub fn read_provenance(path: &Path) -> Result<Vec<Provenance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidArgument(format!("bad provenance line: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskops::apply_transform;
    use candle_core::Tensor;

    /// Paints solid white; enough to see exactly where compositing happened.
    struct White(u32);
    impl GeneratorContract for White {
        fn forward_raw(&self, image: &Tensor, _mask: &Tensor) -> Result<Tensor> {
            Ok(image.ones_like()?)
        }
        fn input_size(&self) -> u32 {
            self.0
        }
    }

    fn clean(id: &str, seed: u8) -> ImageSample {
        let px = image::RgbImage::from_fn(40, 36, |x, y| image::Rgb([(x as u8).wrapping_mul(seed), y as u8, 7]));
        ImageSample::new(id, px, Cohort::Cohort2)
    }

    fn guides() -> Vec<BinaryMask> {
        vec![
            BinaryMask::from_fn("g0", 20, 20, |x, y| (6..14).contains(&x) && (4..16).contains(&y)),
            BinaryMask::from_fn("g1", 64, 64, |x, y| (x as i32 - 32).abs() + (y as i32 - 32).abs() < 12),
        ]
    }

    #[test]
    fn label_fidelity_and_provenance() {
        let imgs = [clean("a", 3), clean("b", 5), clean("c", 11)];
        let gs = guides();
        let out = generate_samples(&White(32), &imgs, &gs, 2, &TransformSampler::default(), 9).unwrap();
        assert_eq!(out.len(), 6);
        for s in &out {
            let src = imgs.iter().find(|i| i.id == s.provenance.clean_id).unwrap();
            assert!(s.mask.count_ones() >= 16);
            for (x, y, px) in s.image.pixels.enumerate_pixels() {
                if s.mask.get(x, y) {
                    assert_eq!(px.0, [255, 255, 255]);
                } else {
                    assert_eq!(px, src.pixels.get_pixel(x, y));
                }
            }
            let g = gs.iter().find(|g| g.id == s.provenance.guiding_mask_id).unwrap();
            let rebuilt = apply_transform(&resize_nearest(g, 40, 36), &s.provenance.transform);
            assert_eq!(rebuilt.as_slice(), s.mask.as_slice());
        }
        let again = generate_samples(&White(32), &imgs, &gs, 2, &TransformSampler::default(), 9).unwrap();
        for (a, b) in out.iter().zip(&again) {
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.image.pixels, b.image.pixels);
        }
    }

    #[test]
    fn rejects_bad_jobs() {
        let imgs = [clean("a", 3)];
        let s = TransformSampler::default();
        assert_eq!(generate_samples(&White(32), &imgs, &[], 1, &s, 0).unwrap_err().code(), "INVALID_ARGUMENT");
        assert_eq!(generate_samples(&White(32), &imgs, &guides(), 0, &s, 0).unwrap_err().code(), "INVALID_ARGUMENT");
        let tiny = [BinaryMask::from_fn("dot", 32, 32, |x, y| x == 3 && y == 3)];
        assert_eq!(generate_samples(&White(32), &imgs, &tiny, 1, &s, 0).unwrap_err().code(), "DEGENERATE_MASK");
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = [clean("a", 3), clean("b", 5)];
        let out = generate_samples(&White(32), &imgs, &guides(), 1, &TransformSampler::default(), 1).unwrap();
        let m = write_corpus(&out, dir.path(), 1).unwrap();
        let back = crate::dataio::read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.entries, m.entries);
        assert!(back.entries.iter().all(|e| e.cohort == Cohort::Synthetic && e.split == Split::Unsplit));
        let prov = read_provenance(&dir.path().join("provenance.jsonl")).unwrap();
        assert_eq!(prov.len(), 2);
        let pairs = back.load_labeled(&back.entries).unwrap();
        assert_eq!(pairs[0].mask.as_slice(), out[0].mask.as_slice());
    }
}
