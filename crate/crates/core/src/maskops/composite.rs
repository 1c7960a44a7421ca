use image::RgbImage;

use crate::dataio::{BinaryMask, ImageSample};
use crate::error::{Error, Result};

/// `generated * mask + original * (1 - mask)` for a binary mask: each pixel is
/// copied verbatim from `generated` where the mask is 1 and from `original`
/// elsewhere. The result keeps the original's identity and provenance.
pub fn composite(generated: &ImageSample, original: &ImageSample, mask: &BinaryMask) -> Result<ImageSample> {
    let pixels = composite_pixels(&generated.pixels, &original.pixels, mask)?;
    Ok(ImageSample {
        pixels,
        ..original.clone()
    })
}

pub fn composite_pixels(generated: &RgbImage, original: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    let dims = original.dimensions();
    if generated.dimensions() != dims || mask.dimensions() != dims {
        return Err(Error::DimensionMismatch(format!(
            "composite needs equal sizes: generated {:?}, original {:?}, mask {:?}",
            generated.dimensions(),
            dims,
            mask.dimensions()
        )));
    }
    let mut out = original.clone();
    for ((dst, src), &m) in out
        .chunks_exact_mut(3)
        .zip(generated.chunks_exact(3))
        .zip(mask.as_slice())
    {
        if m == 1 {
            dst.copy_from_slice(src);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Cohort;
    use crate::rng;
    use rand::Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> ImageSample {
        let mut r = rng::rng(seed, &[]);
        let mut img = RgbImage::new(w, h);
        r.fill(&mut *img);
        ImageSample::new(format!("img{seed}"), img, Cohort::Cohort1)
    }

    #[test]
    fn empty_mask_keeps_original() {
        let (g, o) = (random_image(1, 12, 9), random_image(2, 12, 9));
        let out = composite(&g, &o, &BinaryMask::zeros("m", 12, 9)).unwrap();
        assert_eq!(out.pixels, o.pixels);
    }

    #[test]
    fn full_mask_takes_generated() {
        let (g, o) = (random_image(1, 12, 9), random_image(2, 12, 9));
        let out = composite(&g, &o, &BinaryMask::ones("m", 12, 9)).unwrap();
        assert_eq!(out.pixels, g.pixels);
    }

    #[test]
    fn checkerboard_selects_per_pixel() {
        let (g, o) = (random_image(3, 8, 8), random_image(4, 8, 8));
        let mask = BinaryMask::from_fn("m", 8, 8, |x, y| (x + y) % 2 == 0);
        let out = composite(&g, &o, &mask).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let src = if (x + y) % 2 == 0 { &g } else { &o };
                assert_eq!(out.pixels.get_pixel(x, y), src.pixels.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn size_mismatch() {
        let (g, o) = (random_image(1, 8, 8), random_image(2, 8, 9));
        let err = composite(&g, &o, &BinaryMask::zeros("m", 8, 8)).unwrap_err();
        assert_eq!(err.code(), "DIMENSION_MISMATCH");
    }
}
