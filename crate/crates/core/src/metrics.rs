//! Pixel confusion counts, Dice, micro-averaged F1 and dataset reports.
//!
//! Positive class is 1 (microplastic). Two aggregations are reported:
//! Dice is the unweighted mean of per-image Dice, F1 is computed once from
//! TP/FP/FN summed over every pixel of the dataset. Whenever a ratio would be
//! 0/0 (nothing predicted and nothing present) it is 1.0.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::dataio::{BinaryMask, ImageSample, LabeledPair};
use crate::error::{Error, Result};

pub const AGGREGATION_NOTE: &str =
    "dice = mean of per-image dice; f1/precision/recall = micro-aggregated over all pixels; 0/0 ratios = 1.0";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dimensions() != truth.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.dimensions(),
            truth.dimensions()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2tp / (2tp + fp + fn)`; 1.0 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// Pixel F1 over the summed counts of every image.
pub fn f1_micro(counts: &[ConfusionCounts]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("f1_micro needs at least one image".into()));
    }
    Ok(dice(&counts.iter().copied().sum()))
}

/// Anything that turns an image into a binary mask of the same size.
pub trait MaskPredictor {
    fn predict_binary(&self, image: &ImageSample, threshold: f64) -> Result<BinaryMask>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub dice: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: String,
    pub per_image: Vec<ImageScore>,
    pub dataset_dice_mean: f64,
    pub f1_micro: f64,
    pub precision_micro: f64,
    pub recall_micro: f64,
    pub n_images: usize,
}

impl EvalReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptyInput("evaluation set is empty".into()));
        }
        let n = per_image.len();
        let total: ConfusionCounts = per_image.iter().map(|s| s.counts).sum();
        // Summed in order so the mean is reproducible.
        let dice_sum: f64 = per_image.iter().map(|s| s.dice).sum();
        Ok(EvalReport {
            aggregation: AGGREGATION_NOTE.to_string(),
            dataset_dice_mean: dice_sum / n as f64,
            f1_micro: dice(&total),
            precision_micro: precision(&total),
            recall_micro: recall(&total),
            n_images: n,
            per_image,
        })
    }
}

pub fn evaluate(model: &dyn MaskPredictor, dataset: &[LabeledPair], threshold: f64) -> Result<EvalReport> {
    let scores = dataset
        .iter()
        .map(|pair| {
            let pred = model.predict_binary(&pair.image, threshold)?;
            let counts = confusion(&pred, &pair.mask)?;
            Ok(ImageScore {
                image_id: pair.image.id.clone(),
                dice: dice(&counts),
                counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask2(v: [u8; 4]) -> BinaryMask {
        BinaryMask::new("m", 2, 2, v.to_vec()).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let ones = BinaryMask::ones("a", 4, 4);
        assert_eq!(confusion(&ones, &ones).unwrap(), ConfusionCounts::new(16, 0, 0, 0));
        let c = confusion(&BinaryMask::ones("p", 2, 2), &BinaryMask::zeros("t", 2, 2)).unwrap();
        assert_eq!(c, ConfusionCounts::new(0, 4, 0, 0));
        // pred [[1,0],[1,1]] vs truth [[1,1],[0,1]]
        let c = confusion(&mask2([1, 0, 1, 1]), &mask2([1, 1, 0, 1])).unwrap();
        assert_eq!(c, ConfusionCounts::new(2, 1, 1, 0));
    }

    #[test]
    fn confusion_size_mismatch() {
        let err = confusion(&BinaryMask::zeros("a", 2, 2), &BinaryMask::zeros("b", 3, 2)).unwrap_err();
        assert_eq!(err.code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice(&ConfusionCounts::new(5, 0, 0, 11)), 1.0);
        assert_eq!(dice(&ConfusionCounts::new(0, 3, 4, 9)), 0.0);
        assert!((dice(&ConfusionCounts::new(2, 1, 1, 0)) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(dice(&ConfusionCounts::new(0, 0, 0, 16)), 1.0);
    }

    #[test]
    fn f1_micro_examples() {
        let c = ConfusionCounts::new(2, 1, 1, 0);
        assert_eq!(f1_micro(&[c]).unwrap(), dice(&c));
        let both = [c, ConfusionCounts::new(0, 0, 0, 4)];
        assert!((f1_micro(&both).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(f1_micro(&[ConfusionCounts::new(3, 0, 0, 1); 3]).unwrap(), 1.0);
        assert_eq!(f1_micro(&[]).unwrap_err().code(), "EMPTY_INPUT");
    }

    #[test]
    fn dice_mean_differs_from_micro_f1() {
        let scores = vec![
            ImageScore { image_id: "a".into(), dice: 1.0, counts: ConfusionCounts::new(1, 0, 0, 3) },
            ImageScore { image_id: "b".into(), dice: 0.5, counts: ConfusionCounts::new(10, 10, 10, 0) },
        ];
        let r = EvalReport::from_scores(scores).unwrap();
        assert_eq!(r.dataset_dice_mean, 0.75);
        assert!((r.f1_micro - 22.0 / 42.0).abs() < 1e-12);
        assert!((r.precision_micro - 11.0 / 21.0).abs() < 1e-12);
    }

    struct Constant(bool);
    impl MaskPredictor for Constant {
        fn predict_binary(&self, image: &ImageSample, _: f64) -> Result<BinaryMask> {
            let (w, h) = image.dimensions();
            Ok(if self.0 { BinaryMask::ones("p", w, h) } else { BinaryMask::zeros("p", w, h) })
        }
    }

    #[test]
    fn constant_zero_model_scores_zero() {
        let pair = LabeledPair {
            image: ImageSample::new("i", image::RgbImage::new(4, 4), crate::dataio::Cohort::Cohort3),
            mask: BinaryMask::from_fn("m", 4, 4, |x, _| x == 0),
        };
        let r = evaluate(&Constant(false), &[pair.clone(), pair], 0.5).unwrap();
        assert_eq!(r.f1_micro, 0.0);
        assert_eq!(r.dataset_dice_mean, 0.0);
        assert_eq!(r.n_images, 2);
    }
}
