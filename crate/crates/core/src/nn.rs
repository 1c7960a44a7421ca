//! Tensor plumbing shared by the GAN and the segmenter: raster conversion,
//! seeded parameter init, and the single-file checkpoint archive.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::VarMap;
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::BinaryMask;
use crate::error::{Error, Result};
use crate::rng;

pub(crate) const DEVICE: Device = Device::Cpu;

const META_KEY: &str = "mpseg";

/// `[B, 3, H, W]` in [0, 1].
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let (w, h) = images
        .first()
        .map(|i| i.dimensions())
        .ok_or_else(|| Error::EmptyInput("no images to batch".into()))?;
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (b, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch("batch images differ in size".into()));
        }
        let base = b * 3 * plane;
        for (p, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = f32::from(px[c]) / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h as usize, w as usize), &DEVICE)?)
}

/// `[B, 1, H, W]` of 0.0 / 1.0.
pub fn masks_to_tensor(masks: &[&BinaryMask]) -> Result<Tensor> {
    let (w, h) = masks
        .first()
        .map(|m| m.dimensions())
        .ok_or_else(|| Error::EmptyInput("no masks to batch".into()))?;
    let mut data = Vec::with_capacity(masks.len() * (w * h) as usize);
    for m in masks {
        if m.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch("batch masks differ in size".into()));
        }
        data.extend(m.as_slice().iter().map(|&v| f32::from(v)));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h as usize, w as usize), &DEVICE)?)
}

/// Maps [0, 1] back to 8 bits with round-half-up.
pub fn denormalize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Inverse of [`images_to_tensor`].
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<RgbImage>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 channels, got {c}")));
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    Ok((0..b)
        .map(|i| {
            let base = i * 3 * plane;
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let p = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|ch| denormalize(data[base + ch * plane + p])))
            })
        })
        .collect())
}

pub(crate) fn resize_rgb(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        img.clone()
    } else {
        imageops::resize(img, width, height, FilterType::Triangle)
    }
}

/// Bilinear resampling of a single-channel float map with pixel-center alignment.
pub fn resize_bilinear(src: &[f32], sw: u32, sh: u32, dw: u32, dh: u32) -> Vec<f32> {
    if (sw, sh) == (dw, dh) {
        return src.to_vec();
    }
    let coord = |d: u32, s: u32, n: u32| -> (usize, usize, f32) {
        let f = ((d as f32 + 0.5) * s as f32 / n as f32 - 0.5).clamp(0.0, (s - 1) as f32);
        let i0 = f.floor() as usize;
        let i1 = (i0 + 1).min(s as usize - 1);
        (i0, i1, f - i0 as f32)
    };
    let mut out = Vec::with_capacity((dw * dh) as usize);
    for y in 0..dh {
        let (y0, y1, ty) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, tx) = coord(x, sw, dw);
            let at = |xx: usize, yy: usize| src[yy * sw as usize + xx];
            let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
            let bot = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Numerically stable mean binary cross-entropy on logits:
/// `max(x, 0) - x t + ln(1 + e^-|x|)`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * target)?)? + softplus)?;
    Ok(loss.mean_all()?)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub(crate) fn ensure_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericNonFinite(format!("{what} = {v}")))
    }
}

/// Overwrites every parameter with seeded values: He-uniform weights, zero biases.
/// Variables are visited in name order so the result depends only on the seed.
pub(crate) fn init_params(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    for (i, name) in names.into_iter().enumerate() {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let n: usize = dims.iter().product();
        let values: Vec<f32> = if name.ends_with("bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            let mut r = rng::rng(seed, &[i as u64]);
            (0..n).map(|_| r.random_range(-bound..bound)).collect()
        };
        var.set(&Tensor::from_vec(values, dims, &DEVICE)?)?;
    }
    Ok(())
}

/// Copies the current parameter values.
pub(crate) fn snapshot(varmap: &VarMap) -> Result<HashMap<String, Tensor>> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    data.iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
        .collect()
}

pub(crate) fn restore(varmap: &VarMap, values: &HashMap<String, Tensor>, what: &str) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    if data.len() != values.len() {
        return Err(Error::ArchMismatch {
            found: format!("{} tensors", values.len()),
            expected: format!("{} tensors for {what}", data.len()),
        });
    }
    for (name, var) in data.iter() {
        let value = values.get(name).ok_or_else(|| Error::ArchMismatch {
            found: "missing tensor".into(),
            expected: format!("{what} tensor {name}"),
        })?;
        if value.dims() != var.dims() {
            return Err(Error::ArchMismatch {
                found: format!("{name} {:?}", value.dims()),
                expected: format!("{name} {:?}", var.dims()),
            });
        }
        var.set(&value.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

/// Lowercase hex SHA-256 of a value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Writes tensors plus JSON metadata as one safetensors file. Tensor names are
/// prefixed with `group.` so several networks share a file.
pub(crate) fn save_archive<M: Serialize>(
    path: &Path,
    groups: &[(&str, &VarMap)],
    meta: &M,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for (group, varmap) in groups {
        let data = varmap.data().lock().expect("varmap lock poisoned");
        for (name, var) in data.iter() {
            tensors.push((format!("{group}.{name}"), var.as_tensor().clone()));
        }
    }
    tensors.sort_by(|a, b| a.0.cmp(&b.0));
    let mut info = HashMap::new();
    info.insert(
        META_KEY.to_string(),
        serde_json::to_string(meta).expect("metadata serializes"),
    );
    let bytes = safetensors::tensor::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(info))
        .map_err(|e| Error::CorruptCheckpoint(format!("serialize: {e}")))?;
    crate::dataio::write_atomic(path, &bytes)
}

pub(crate) struct Archive<M> {
    pub meta: M,
    pub groups: HashMap<String, HashMap<String, Tensor>>,
}

pub(crate) fn load_archive<M: DeserializeOwned>(path: &Path) -> Result<Archive<M>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: String| Error::CorruptCheckpoint(format!("{}: {what}", path.display()));
    let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let (_, header) =
        safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| corrupt("missing metadata".into()))?;
    let meta: M = serde_json::from_str(meta_json).map_err(|e| corrupt(e.to_string()))?;
    let mut groups: HashMap<String, HashMap<String, Tensor>> = HashMap::new();
    for (name, view) in st.tensors() {
        let (group, rest) = name
            .split_once('.')
            .ok_or_else(|| corrupt(format!("tensor {name} has no group prefix")))?;
        let tensor = Tensor::from_raw_buffer(view.data(), DType::F32, view.shape(), &DEVICE)
            .map_err(|e| corrupt(e.to_string()))?;
        groups
            .entry(group.to_string())
            .or_default()
            .insert(rest.to_string(), tensor);
    }
    Ok(Archive { meta, groups })
}

/// Top-left `k x k` window of channel 0 of the first batch item.
pub(crate) fn probe_window(t: &Tensor, k: usize) -> Result<Vec<f32>> {
    let (_, _, h, w) = t.dims4()?;
    let (kh, kw) = (k.min(h), k.min(w));
    Ok(t.get(0)?
        .get(0)?
        .narrow(D::Minus2, 0, kh)?
        .narrow(D::Minus1, 0, kw)?
        .flatten_all()?
        .to_dtype(DType::F32)?
        .to_vec1::<f32>()?)
}

pub(crate) fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    if a.len() != b.len() {
        return f32::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
