use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest side length accepted when ingesting rasters from disk or the wire.
pub const MIN_SIDE: u32 = 32;

/// 8-bit grayscale values at or above this become foreground.
pub const MASK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    /// Clean microplastic images with hand-drawn masks.
    Cohort1,
    /// Plastic-free scene images.
    Cohort2,
    /// Real microplastic in diverse scenes, held out for evaluation.
    Cohort3,
    Synthetic,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Cohort1 => "cohort1",
            Cohort::Cohort2 => "cohort2",
            Cohort::Cohort3 => "cohort3",
            Cohort::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cohort1" => Ok(Cohort::Cohort1),
            "cohort2" => Ok(Cohort::Cohort2),
            "cohort3" => Ok(Cohort::Cohort3),
            "synthetic" => Ok(Cohort::Synthetic),
            other => Err(Error::InvalidArgument(format!("unknown cohort {other:?}"))),
        }
    }
}

/// An RGB raster with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub pixels: RgbImage,
    pub cohort: Cohort,
    pub source_path: String,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, pixels: RgbImage, cohort: Cohort) -> Self {
        ImageSample {
            id: id.into(),
            pixels,
            cohort,
            source_path: String::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    pub fn check_min_size(&self) -> Result<()> {
        check_min_size(self.width(), self.height())
    }
}

pub(crate) fn check_min_size(width: u32, height: u32) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    Ok(())
}

/// A strictly two-valued raster: 1 = microplastic, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub id: String,
    width: u32,
    height: u32,
    data: Vec<u8>,
    pub paired_image_id: Option<String>,
}

impl BinaryMask {
    /// Builds a mask from row-major 0/1 values.
    pub fn new(id: impl Into<String>, width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "mask data has {} values, {width}x{height} needs {expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask value {bad} is not binary"
            )));
        }
        Ok(BinaryMask {
            id: id.into(),
            width,
            height,
            data,
            paired_image_id: None,
        })
    }

    pub fn zeros(id: impl Into<String>, width: u32, height: u32) -> Self {
        BinaryMask {
            id: id.into(),
            width,
            height,
            data: vec![0; width as usize * height as usize],
            paired_image_id: None,
        }
    }

    pub fn ones(id: impl Into<String>, width: u32, height: u32) -> Self {
        BinaryMask {
            data: vec![1; width as usize * height as usize],
            ..BinaryMask::zeros(id, width, height)
        }
    }

    pub fn from_fn(
        id: impl Into<String>,
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        BinaryMask {
            id: id.into(),
            width,
            height,
            data,
            paired_image_id: None,
        }
    }

    /// Binarizes an 8-bit grayscale raster with the `>= 128` rule.
    pub fn from_gray(id: impl Into<String>, gray: &GrayImage) -> Self {
        let (width, height) = gray.dimensions();
        let data = gray
            .as_raw()
            .iter()
            .map(|&v| u8::from(v >= MASK_THRESHOLD))
            .collect();
        BinaryMask {
            id: id.into(),
            width,
            height,
            data,
            paired_image_id: None,
        }
    }

    /// On-disk encoding: 0 and 255.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = u8::from(value);
    }

    /// Row-major 0/1 values.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}
