//! Mask-guided inpainting GAN. The generator only ever contributes pixels
//! inside the guiding mask: its raw output is composited into the source
//! image before the discriminator or any caller sees it.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, GanCheckpoint, GanCheckpointMeta, ProbeRecord};
pub use loss::{discriminator_accuracy, discriminator_loss, gan_losses, generator_loss, masked_l1, GanLossValues};
pub use model::{
    composite_tensor, generator_composited_forward, generator_raw_image, Discriminator, DiscriminatorContract, GanArch,
    GanModels, Generator, GeneratorContract,
};
pub use train::{train_gan, train_gan_with, unmasked_differences, BatchAudit, GanEpochMetrics, GanTrainConfig};
