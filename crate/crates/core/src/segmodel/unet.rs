use candle_core::{DType, Tensor};
use candle_nn::{conv2d, conv_transpose2d, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Module, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, DEVICE};

/// Encoder/decoder depth; inputs must be divisible by `2^DEPTH`.
pub const DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backbone {
    SmallUnet,
    LargeUnet,
}

impl Backbone {
    pub fn default_width(self) -> usize {
        match self {
            Backbone::SmallUnet => 16,
            Backbone::LargeUnet => 32,
        }
    }
}

/// Shape-determining hyperparameters of the segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegArch {
    pub backbone: Backbone,
    pub base_channels: usize,
    pub image_size: u32,
}

impl SegArch {
    pub fn hash(&self) -> String {
        nn::config_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "segmentation image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct DoubleConv(Conv2d, Conv2d);

impl DoubleConv {
    fn new(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig { padding: 1, ..Default::default() };
        Ok(DoubleConv(conv2d(cin, cout, 3, cfg, vb.pp("a"))?, conv2d(cout, cout, 3, cfg, vb.pp("b"))?))
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.1.forward(&self.0.forward(x)?.relu()?)?.relu()
    }
}

/// Three max-pool downsamplings, a bottleneck, and three transposed-conv
/// upsamplings with skip connections; 1x1 logit head.
#[derive(Debug)]
pub struct UNet {
    arch: SegArch,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    ups: Vec<ConvTranspose2d>,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl UNet {
    pub fn new(arch: SegArch, vb: VarBuilder) -> Result<Self> {
        arch.validate()?;
        let w = arch.base_channels;
        let widths: Vec<usize> = (0..DEPTH).map(|i| w << i).collect();
        let mut enc = Vec::with_capacity(DEPTH);
        let mut cin = 3;
        for (i, &c) in widths.iter().enumerate() {
            enc.push(DoubleConv::new(cin, c, vb.pp(format!("enc{i}")))?);
            cin = c;
        }
        let bottleneck = DoubleConv::new(cin, w << DEPTH, vb.pp("mid"))?;
        let up_cfg = ConvTranspose2dConfig { stride: 2, ..Default::default() };
        let mut ups = Vec::with_capacity(DEPTH);
        let mut dec = Vec::with_capacity(DEPTH);
        for i in (0..DEPTH).rev() {
            let c = widths[i];
            ups.push(conv_transpose2d(2 * c, c, 2, up_cfg, vb.pp(format!("up{i}")))?);
            dec.push(DoubleConv::new(2 * c, c, vb.pp(format!("dec{i}")))?);
        }
        let head = conv2d(w, 1, 1, Default::default(), vb.pp("head"))?;
        Ok(UNet { arch, enc, bottleneck, ups, dec, head })
    }

    pub fn arch(&self) -> SegArch {
        self.arch
    }

    /// `[B, 3, H, W]` in [0, 1] to `[B, 1, H, W]` logits. H and W must be
    /// divisible by 8.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(DEPTH);
        let mut h = x.clone();
        for block in &self.enc {
            h = block.forward(&h)?;
            skips.push(h.clone());
            h = h.max_pool2d(2)?;
        }
        h = self.bottleneck.forward(&h)?;
        for (up, block) in self.ups.iter().zip(&self.dec) {
            let skip = skips.pop().expect("one skip per level");
            h = Tensor::cat(&[&up.forward(&h)?, &skip], 1)?;
            h = block.forward(&h)?;
        }
        Ok(self.head.forward(&h)?)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits(x)?)?)
    }
}

/// Builds a network and its parameter store with seeded initialization.
pub(crate) fn build(arch: SegArch, seed: u64) -> Result<(UNet, VarMap)> {
    let vars = VarMap::new();
    let net = UNet::new(arch, VarBuilder::from_varmap(&vars, DType::F32, &DEVICE))?;
    nn::init_params(&vars, seed)?;
    Ok((net, vars))
}

pub(crate) fn parameter_count(vars: &VarMap) -> usize {
    vars.all_vars().iter().map(|v| v.elem_count()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_unet_is_about_half_a_million_parameters() {
        let arch = SegArch { backbone: Backbone::SmallUnet, base_channels: 16, image_size: 64 };
        let (_, vars) = build(arch, 0).unwrap();
        let n = parameter_count(&vars);
        assert!((400_000..600_000).contains(&n), "{n}");
    }

    #[test]
    fn output_shape_and_range() {
        let arch = SegArch { backbone: Backbone::SmallUnet, base_channels: 4, image_size: 32 };
        let (net, _) = build(arch, 3).unwrap();
        let x = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &DEVICE).unwrap();
        let p = net.probabilities(&x).unwrap();
        assert_eq!(p.dims(), &[2, 1, 32, 32]);
        let v = p.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn rejects_sizes_off_the_grid() {
        let arch = SegArch { backbone: Backbone::SmallUnet, base_channels: 4, image_size: 40 };
        assert_eq!(arch.validate().unwrap_err().code(), "INVALID_ARGUMENT");
    }
}
