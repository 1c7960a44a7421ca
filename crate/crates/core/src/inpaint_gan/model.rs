use candle_core::{DType, Tensor};
use candle_nn::{
    conv2d, conv_transpose2d, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Module,
    VarBuilder, VarMap,
};
use serde::{Deserialize, Serialize};

use crate::dataio::{BinaryMask, ImageSample};
use crate::error::{Error, Result};
use crate::maskops::{composite_pixels, resize_nearest};
use crate::nn::{self, DEVICE};

/// Shape-determining hyperparameters of the generator/discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanArch {
    pub image_size: u32,
    pub base_channels: usize,
    pub residual_blocks: usize,
}

impl GanArch {
    pub fn hash(&self) -> String {
        nn::config_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "GAN image_size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Image + binary mask in, raw RGB in [0, 1] out, same spatial size.
pub trait GeneratorContract: Send + Sync {
    /// `image`: `[B, 3, H, W]` in [0, 1]; `mask`: `[B, 1, H, W]` of 0/1.
    fn forward_raw(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor>;

    /// Native working resolution; inputs of other sizes are resampled to it.
    fn input_size(&self) -> u32;
}

/// Realness logits, one per patch.
pub trait DiscriminatorContract: Send + Sync {
    fn forward(&self, image: &Tensor) -> Result<Tensor>;
}

fn down(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    let cfg = Conv2dConfig { padding: 1, stride: 2, ..Default::default() };
    conv2d(cin, cout, 4, cfg, vb)
}

fn same(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    conv2d(cin, cout, 3, Conv2dConfig { padding: 1, ..Default::default() }, vb)
}

fn up(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<ConvTranspose2d> {
    let cfg = ConvTranspose2dConfig { padding: 1, stride: 2, ..Default::default() };
    conv_transpose2d(cin, cout, 4, cfg, vb)
}

/// Encoder-decoder: three stride-2 convolutions, residual blocks at 1/8
/// resolution, three transposed convolutions, sigmoid head. The mask is
/// concatenated to the hole-punched image as a fourth input channel.
#[derive(Debug)]
pub struct Generator {
    arch: GanArch,
    downs: Vec<Conv2d>,
    blocks: Vec<(Conv2d, Conv2d)>,
    ups: Vec<ConvTranspose2d>,
    head: Conv2d,
}

impl Generator {
    pub fn new(arch: GanArch, vb: VarBuilder) -> Result<Self> {
        arch.validate()?;
        let w = arch.base_channels;
        let downs = vec![
            down(4, w, vb.pp("down0"))?,
            down(w, 2 * w, vb.pp("down1"))?,
            down(2 * w, 4 * w, vb.pp("down2"))?,
        ];
        let blocks = (0..arch.residual_blocks)
            .map(|i| {
                let vb = vb.pp(format!("res{i}"));
                Ok((same(4 * w, 4 * w, vb.pp("a"))?, same(4 * w, 4 * w, vb.pp("b"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let ups = vec![
            up(4 * w, 2 * w, vb.pp("up0"))?,
            up(2 * w, w, vb.pp("up1"))?,
            up(w, w, vb.pp("up2"))?,
        ];
        let head = same(w, 3, vb.pp("head"))?;
        Ok(Generator { arch, downs, blocks, ups, head })
    }

    pub fn arch(&self) -> GanArch {
        self.arch
    }
}

impl GeneratorContract for Generator {
    fn forward_raw(&self, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let holed = image.broadcast_mul(&mask.affine(-1.0, 1.0)?)?;
        let mut x = Tensor::cat(&[&holed, mask], 1)?;
        for conv in &self.downs {
            x = nn_leaky(&conv.forward(&x)?)?;
        }
        for (a, b) in &self.blocks {
            let h = a.forward(&x)?.relu()?;
            x = (x + b.forward(&h)?)?.relu()?;
        }
        for conv in &self.ups {
            x = conv.forward(&x)?.relu()?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&x)?)?)
    }

    fn input_size(&self) -> u32 {
        self.arch.image_size
    }
}

fn nn_leaky(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::leaky_relu(x, 0.2)
}

/// Patch discriminator: two stride-2 convolutions and a 3x3 logit head, so
/// each output cell scores one receptive-field patch.
#[derive(Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(arch: GanArch, vb: VarBuilder) -> Result<Self> {
        let w = arch.base_channels;
        Ok(Discriminator {
            convs: vec![down(3, w, vb.pp("conv0"))?, down(w, 2 * w, vb.pp("conv1"))?],
            head: same(2 * w, 1, vb.pp("head"))?,
        })
    }
}

impl DiscriminatorContract for Discriminator {
    fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut x = image.clone();
        for conv in &self.convs {
            x = nn_leaky(&conv.forward(&x)?)?;
        }
        Ok(self.head.forward(&x)?)
    }
}

/// Both networks with their parameter stores.
pub struct GanModels {
    pub arch: GanArch,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub(crate) gen_vars: VarMap,
    pub(crate) disc_vars: VarMap,
}

impl GanModels {
    /// Fresh networks with seeded initialization.
    pub fn new(arch: GanArch, seed: u64) -> Result<Self> {
        let gen_vars = VarMap::new();
        let disc_vars = VarMap::new();
        let generator = Generator::new(arch, VarBuilder::from_varmap(&gen_vars, DType::F32, &DEVICE))?;
        let discriminator =
            Discriminator::new(arch, VarBuilder::from_varmap(&disc_vars, DType::F32, &DEVICE))?;
        nn::init_params(&gen_vars, seed)?;
        nn::init_params(&disc_vars, seed ^ 0xd15c)?;
        Ok(GanModels { arch, generator, discriminator, gen_vars, disc_vars })
    }

    pub fn parameter_count(&self) -> usize {
        [&self.gen_vars, &self.disc_vars]
            .iter()
            .flat_map(|vm| vm.all_vars())
            .map(|v| v.elem_count())
            .sum()
    }
}

/// Mask compositing on tensors: generator output where the mask is 1, the source image
/// elsewhere. Selection, not blending, so unmasked values are copied exactly.
pub fn composite_tensor(raw: &Tensor, image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let select = mask.broadcast_as(raw.shape())?.ne(0f32)?;
    Ok(select.where_cond(raw, image)?)
}

/// Runs the generator on one sample and composites its output into the
/// source image. Pixels outside the mask come back bit-identical.
pub fn generator_composited_forward(
    gen: &dyn GeneratorContract,
    image: &ImageSample,
    mask: &BinaryMask,
) -> Result<ImageSample> {
    let raw = generator_raw_image(gen, image, mask)?;
    let pixels = composite_pixels(&raw, &image.pixels, mask)?;
    Ok(ImageSample { pixels, ..image.clone() })
}

/// The generator's unmasked output at the image's resolution.
pub fn generator_raw_image(
    gen: &dyn GeneratorContract,
    image: &ImageSample,
    mask: &BinaryMask,
) -> Result<image::RgbImage> {
    let (w, h) = image.dimensions();
    if mask.dimensions() != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs mask {:?}",
            image.dimensions(),
            mask.dimensions()
        )));
    }
    let s = gen.input_size();
    let scaled_img = nn::resize_rgb(&image.pixels, s, s);
    let scaled_mask = resize_nearest(mask, s, s);
    let x = nn::images_to_tensor(&[&scaled_img])?;
    let m = nn::masks_to_tensor(&[&scaled_mask])?;
    let raw = gen.forward_raw(&x, &m)?;
    let raw = nn::tensor_to_images(&raw)?.remove(0);
    Ok(nn::resize_rgb(&raw, w, h))
}
