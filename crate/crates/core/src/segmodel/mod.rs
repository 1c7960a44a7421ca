//! Binary segmentation: a small U-Net, its training loop, inference at
//! arbitrary input sizes, and the baseline-versus-augmented experiment.

mod experiment;
mod loss;
mod model;
mod train;
mod unet;

pub use experiment::{run_experiment, Arm, EvalSet, ExperimentData, ExperimentReport, ExperimentSpec, RunRecord, RunScore, SummaryCell};
pub use loss::{segmentation_loss, soft_dice_loss, SegLoss, DICE_SMOOTH};
pub use model::{threshold_map, Prediction, SegCheckpointMeta, SegModel};
pub use train::{train_segmentation, BatchRecord, SegEpochMetrics, SegTrainConfig, SegTraining};
pub use unet::{Backbone, SegArch, UNet, DEPTH};
