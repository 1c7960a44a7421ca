use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::sample::{check_min_size, BinaryMask, Cohort, ImageSample};
use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::NonImageFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads an RGB image. Alpha and extra channels are dropped.
pub fn load_image(path: &Path, cohort: Cohort) -> Result<ImageSample> {
    let pixels = decode(path)?.to_rgb8();
    check_min_size(pixels.width(), pixels.height())?;
    Ok(ImageSample {
        id: stem(path),
        pixels,
        cohort,
        source_path: path.to_string_lossy().into_owned(),
    })
}

/// Reads a mask and binarizes it at 128.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let gray = decode(path)?.to_luma8();
    Ok(BinaryMask::from_gray(stem(path), &gray))
}

/// Loads an image with its mask and links them.
pub fn load_pair(
    image_path: &Path,
    mask_path: &Path,
    cohort: Cohort,
) -> Result<(ImageSample, BinaryMask)> {
    let image = load_image(image_path, cohort)?;
    let mut mask = load_mask(mask_path)?;
    if mask.dimensions() != image.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "mask {} is {:?}, image {} is {:?}",
            mask_path.display(),
            mask.dimensions(),
            image_path.display(),
            image.dimensions()
        )));
    }
    mask.paired_image_id = Some(image.id.clone());
    Ok((image, mask))
}

pub fn save_image(image: &RgbImage, path: &Path) -> Result<()> {
    image
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_write_error(path, e))
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    mask.to_gray()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_write_error(path, e))
}

fn image_write_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    }
}

/// PNG-encodes an RGB raster. The encoder writes no ancillary metadata chunks.
pub fn encode_png_rgb(image: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

pub fn encode_png_gray(image: &GrayImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

/// Decodes uploaded bytes (PNG or JPEG) into an RGB sample.
pub fn decode_upload(id: &str, bytes: &[u8]) -> Result<ImageSample> {
    let pixels = image::load_from_memory(bytes)
        .map_err(|e| Error::NonImageFile {
            path: id.into(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    check_min_size(pixels.width(), pixels.height())?;
    Ok(ImageSample::new(id, pixels, Cohort::Cohort3))
}
