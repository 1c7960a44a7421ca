//! Procedural stand-in for the real cohorts: fibers and films drawn over
//! configurable backgrounds, with the mask rasterized from the same geometry.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{save_image, save_mask};
use super::manifest::{write_manifest, DatasetManifest, ManifestEntry, Split};
use super::sample::{BinaryMask, Cohort, ImageSample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Fiber,
    Film,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMix {
    pub fiber: f64,
    pub film: f64,
}

impl Default for ShapeMix {
    fn default() -> Self {
        ShapeMix { fiber: 0.5, film: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    TextureNoise,
    /// Smooth, bright, nearly uniform. Looks like a cleaned filter.
    Gradient,
    /// Dark textured scene littered with non-plastic particles.
    Debris,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusSpec {
    pub n_images: usize,
    pub image_size: u32,
    pub shape_mix: ShapeMix,
    pub background: Background,
    /// Inclusive range of plastic shapes drawn per image.
    pub shapes_per_image: (u32, u32),
    pub cohort: Cohort,
    pub seed: u64,
}

impl ToyCorpusSpec {
    pub fn new(n_images: usize, image_size: u32, background: Background, cohort: Cohort, seed: u64) -> Self {
        ToyCorpusSpec {
            n_images,
            image_size,
            shape_mix: ShapeMix::default(),
            background,
            shapes_per_image: (1, 3),
            cohort,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::InvalidArgument("n_images must be at least 1".into()));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidArgument("image_size must be at least 8".into()));
        }
        let ShapeMix { fiber, film } = self.shape_mix;
        if fiber < 0.0 || film < 0.0 || ((fiber + film) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "shape_mix must be non-negative and sum to 1, got fiber={fiber} film={film}"
            )));
        }
        if self.shapes_per_image.0 > self.shapes_per_image.1 {
            return Err(Error::InvalidArgument("shapes_per_image range is inverted".into()));
        }
        Ok(())
    }

    fn prefix(&self) -> &'static str {
        match self.cohort {
            Cohort::Cohort1 => "c1",
            Cohort::Cohort2 => "c2",
            Cohort::Cohort3 => "c3",
            Cohort::Synthetic => "syn",
        }
    }
}

/// Geometry of one drawn particle, in pixel coordinates (pixel centers at +0.5).
#[derive(Debug, Clone, PartialEq)]
pub enum ToyShape {
    Fiber { points: Vec<(f64, f64)>, width: f64 },
    Film { vertices: Vec<(f64, f64)> },
}

impl ToyShape {
    pub fn morphology(&self) -> Morphology {
        match self {
            ToyShape::Fiber { .. } => Morphology::Fiber,
            ToyShape::Film { .. } => Morphology::Film,
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            ToyShape::Fiber { points, width } => {
                let r2 = (width / 2.0).powi(2);
                points
                    .windows(2)
                    .any(|seg| segment_dist2(px, py, seg[0], seg[1]) <= r2)
            }
            ToyShape::Film { vertices } => point_in_polygon(px, py, vertices),
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        let (pts, pad) = match self {
            ToyShape::Fiber { points, width } => (points.as_slice(), width / 2.0 + 1.0),
            ToyShape::Film { vertices } => (vertices.as_slice(), 1.0),
        };
        let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in pts {
            b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
        (b.0 - pad, b.1 - pad, b.2 + pad, b.3 + pad)
    }
}

fn segment_dist2(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

// Even-odd rule.
fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// One generated image with its exact label and the geometry behind it.
#[derive(Debug, Clone)]
pub struct ToyImage {
    pub image: ImageSample,
    pub mask: BinaryMask,
    pub shapes: Vec<ToyShape>,
}

pub fn synth_toy_corpus(spec: &ToyCorpusSpec) -> Result<(Vec<ImageSample>, Vec<BinaryMask>)> {
    Ok(synth_toy_images(spec)?
        .into_iter()
        .map(|t| (t.image, t.mask))
        .unzip())
}

/// Generates the corpus; image `i` depends only on `(seed, i)`.
pub fn synth_toy_images(spec: &ToyCorpusSpec) -> Result<Vec<ToyImage>> {
    spec.validate()?;
    Ok((0..spec.n_images)
        .into_par_iter()
        .map(|i| render_one(spec, i))
        .collect())
}

fn render_one(spec: &ToyCorpusSpec, index: usize) -> ToyImage {
    let mut rng = rng::rng(spec.seed, &[index as u64]);
    let size = spec.image_size;
    let mut pixels = match spec.background {
        Background::Gradient => gradient_background(&mut rng, size),
        Background::TextureNoise => texture_background(&mut rng, size),
        Background::Debris => debris_background(&mut rng, size),
    };

    let (lo, hi) = spec.shapes_per_image;
    let n_shapes = rng.random_range(lo..=hi);
    let shapes: Vec<ToyShape> = (0..n_shapes)
        .map(|_| {
            let fiber = rng.random::<f64>() < spec.shape_mix.fiber;
            if fiber {
                random_fiber(&mut rng, size, (1.0, 4.0))
            } else {
                random_film(&mut rng, size, (0.06, 0.14))
            }
        })
        .collect();

    let id = format!("{}_{index:05}", spec.prefix());
    let mut mask = BinaryMask::zeros(format!("{id}_mask"), size, size);
    for shape in &shapes {
        let color = plastic_color(&mut rng);
        fill_shape(&mut rng, &mut pixels, shape, color, 10, Some(&mut mask));
    }
    mask.paired_image_id = Some(id.clone());
    ToyImage {
        image: ImageSample::new(id, pixels, spec.cohort),
        mask,
        shapes,
    }
}

fn fill_shape(
    rng: &mut ChaCha8Rng,
    pixels: &mut RgbImage,
    shape: &ToyShape,
    color: [f64; 3],
    jitter: i32,
    mut mask: Option<&mut BinaryMask>,
) {
    let (w, h) = pixels.dimensions();
    let (x0, y0, x1, y1) = shape.bbox();
    let xs = (x0.floor().max(0.0) as u32)..(x1.ceil().min(f64::from(w)) as u32);
    let ys = (y0.floor().max(0.0) as u32)..(y1.ceil().min(f64::from(h)) as u32);
    for y in ys {
        for x in xs.clone() {
            if shape.contains(f64::from(x) + 0.5, f64::from(y) + 0.5) {
                let n = f64::from(rng.random_range(-jitter..=jitter));
                pixels.put_pixel(x, y, Rgb(color.map(|c| to_u8(c + n))));
                if let Some(m) = mask.as_deref_mut() {
                    m.set(x, y, true);
                }
            }
        }
    }
}

fn random_fiber(rng: &mut ChaCha8Rng, size: u32, width_range: (f64, f64)) -> ToyShape {
    let s = f64::from(size);
    let n_points = rng.random_range(3..=6);
    let length = s * rng.random_range(0.3..0.7);
    let step = length / f64::from(n_points - 1);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut p = (rng.random_range(0.15 * s..0.85 * s), rng.random_range(0.15 * s..0.85 * s));
    let mut points = vec![p];
    for _ in 1..n_points {
        heading += rng.random_range(-0.7..0.7);
        p = (p.0 + step * heading.cos(), p.1 + step * heading.sin());
        points.push(p);
    }
    ToyShape::Fiber {
        points,
        width: rng.random_range(width_range.0..=width_range.1),
    }
}

fn random_film(rng: &mut ChaCha8Rng, size: u32, radius_range: (f64, f64)) -> ToyShape {
    let s = f64::from(size);
    let center = (rng.random_range(0.15 * s..0.85 * s), rng.random_range(0.15 * s..0.85 * s));
    let radius = s * rng.random_range(radius_range.0..radius_range.1);
    let n = rng.random_range(7..=12);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let vertices = (0..n)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * f64::from(k) / f64::from(n);
            let r = radius * rng.random_range(0.55..1.0);
            (center.0 + r * a.cos(), center.1 + r * a.sin())
        })
        .collect();
    ToyShape::Film { vertices }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Vivid, saturated hue.
fn plastic_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.7..1.0),
        rng.random_range(0.75..1.0),
    )
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Smooth random field in [-1, 1] from a bilinearly upsampled coarse grid.
fn value_noise(rng: &mut ChaCha8Rng, size: u32, cells: u32) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = f64::from(size);
    let mut out = Vec::with_capacity((size * size) as usize);
    for y in 0..size {
        for x in 0..size {
            let fx = (f64::from(x) + 0.5) / s * f64::from(cells);
            let fy = (f64::from(y) + 0.5) / s * f64::from(cells);
            let (ix, iy) = (fx.floor() as u32, fy.floor() as u32);
            let (tx, ty) = (fx - f64::from(ix), fy - f64::from(iy));
            let at = |cx: u32, cy: u32| grid[(cy.min(cells) * g + cx.min(cells)) as usize];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn gradient_background(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    let base = [
        rng.random_range(210.0..235.0),
        rng.random_range(205.0..230.0),
        rng.random_range(190.0..215.0),
    ];
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(5.0..20.0);
    let s = f64::from(size);
    RgbImage::from_fn(size, size, |x, y| {
        let t = ((f64::from(x) / s - 0.5) * angle.cos() + (f64::from(y) / s - 0.5) * angle.sin()) * 2.0;
        let n = f64::from(rng.random_range(-4i32..=4));
        Rgb(base.map(|c| to_u8(c + amp * t + n)))
    })
}

fn texture_background(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    let base = [
        rng.random_range(130.0..170.0),
        rng.random_range(135.0..175.0),
        rng.random_range(140.0..180.0),
    ];
    let noise = value_noise(rng, size, 6);
    RgbImage::from_fn(size, size, |x, y| {
        let v = noise[(y * size + x) as usize] * 30.0;
        let n = f64::from(rng.random_range(-6i32..=6));
        Rgb(base.map(|c| to_u8(c + v + n)))
    })
}

fn debris_background(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    let base = [
        rng.random_range(95.0..130.0),
        rng.random_range(80.0..110.0),
        rng.random_range(55.0..80.0),
    ];
    let coarse = value_noise(rng, size, 5);
    let fine = value_noise(rng, size, 16);
    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let i = (y * size + x) as usize;
        let v = coarse[i] * 30.0 + fine[i] * 15.0;
        let n = f64::from(rng.random_range(-8i32..=8));
        Rgb(base.map(|c| to_u8(c + v + n)))
    });
    let n_debris = rng.random_range(3..=8);
    for _ in 0..n_debris {
        let shape = if rng.random::<f64>() < 0.5 {
            random_fiber(rng, size, (1.0, 3.0))
        } else {
            random_film(rng, size, (0.04, 0.12))
        };
        let color = debris_color(rng);
        fill_shape(rng, &mut img, &shape, color, 14, None);
    }
    img
}

/// Muted organic tones: dark browns, olives, tans.
fn debris_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    match rng.random_range(0..3) {
        0 => [rng.random_range(45.0..80.0), rng.random_range(35.0..60.0), rng.random_range(20.0..40.0)],
        1 => [rng.random_range(70.0..100.0), rng.random_range(85.0..115.0), rng.random_range(35.0..55.0)],
        _ => [rng.random_range(160.0..190.0), rng.random_range(140.0..165.0), rng.random_range(100.0..125.0)],
    }
}

/// Renders the corpus to `dir` (`images/`, `masks/`, `manifest.json`) and
/// returns the manifest. Plastic-free cohorts (Cohort 2) get no mask files.
pub fn write_toy_corpus(spec: &ToyCorpusSpec, dir: &Path) -> Result<DatasetManifest> {
    let items = synth_toy_images(spec)?;
    let with_masks = spec.cohort != Cohort::Cohort2;
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    if with_masks {
        fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    }
    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        let image_rel = format!("images/{}.png", item.image.id);
        save_image(&item.image.pixels, &dir.join(&image_rel))?;
        let mask_rel = if with_masks {
            let rel = format!("masks/{}.png", item.image.id);
            save_mask(&item.mask, &dir.join(&rel))?;
            Some(rel)
        } else {
            None
        };
        entries.push(ManifestEntry {
            image: image_rel,
            mask: mask_rel,
            cohort: spec.cohort,
            split: Split::Unsplit,
        });
    }
    let manifest = DatasetManifest::new(dir, spec.seed, entries);
    write_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}
