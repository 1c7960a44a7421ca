use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::train::{train_segmentation, SegTrainConfig};
use crate::dataio::{Cohort, LabeledPair};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, AGGREGATION_NOTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Cohort 1 only.
    Baseline,
    /// Cohort 1 plus the synthetic corpus.
    Augmented,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Baseline, Arm::Augmented];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Augmented => "augmented",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Baseline => "Cohort 1 only",
            Arm::Augmented => "Cohort 1 + synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    Cohort1Test,
    Cohort3,
}

impl EvalSet {
    pub const ALL: [EvalSet; 2] = [EvalSet::Cohort1Test, EvalSet::Cohort3];

    pub fn label(self) -> &'static str {
        match self {
            EvalSet::Cohort1Test => "Cohort 1 test",
            EvalSet::Cohort3 => "Cohort 3",
        }
    }
}

/// Everything both arms train and evaluate on. The synthetic corpus is used
/// whole; it is never split.
#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    pub cohort1_train: Vec<LabeledPair>,
    pub cohort1_val: Vec<LabeledPair>,
    pub cohort1_test: Vec<LabeledPair>,
    pub synthetic: Vec<LabeledPair>,
    pub cohort3: Vec<LabeledPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Shared by both arms; only `seed` is replaced per run.
    pub config: SegTrainConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub arm: Arm,
    pub seed: u64,
    pub eval_set: EvalSet,
    pub f1_micro: f64,
    pub dice_mean: f64,
}

/// One trained model: what it saw and when it peaked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: Arm,
    pub seed: u64,
    pub n_train: usize,
    pub cohorts_seen: Vec<Cohort>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub arm: Arm,
    pub eval_set: EvalSet,
    pub f1_mean: f64,
    pub dice_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub aggregation: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub scores: Vec<RunScore>,
    pub summary: Vec<SummaryCell>,
}

impl ExperimentReport {
    pub fn score(&self, arm: Arm, seed: u64, set: EvalSet) -> Option<&RunScore> {
        self.scores.iter().find(|s| s.arm == arm && s.seed == seed && s.eval_set == set)
    }

    pub fn cell(&self, arm: Arm, set: EvalSet) -> Option<&SummaryCell> {
        self.summary.iter().find(|c| c.arm == arm && c.eval_set == set)
    }

    /// Rows are arms, columns are F1 and Dice per evaluation set, values are
    /// means over seeds.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.aggregation);
        let _ = writeln!(out, "# seeds: {:?}", self.seeds);
        let _ = write!(out, "{:<22}", "Model");
        for set in EvalSet::ALL {
            let _ = write!(out, " | {:^15}", set.label());
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<22}", "");
        for _ in EvalSet::ALL {
            let _ = write!(out, " | {:>6}  {:>6} ", "F1", "Dice");
        }
        let _ = writeln!(out);
        for arm in Arm::ALL {
            let _ = write!(out, "{:<22}", arm.label());
            for set in EvalSet::ALL {
                match self.cell(arm, set) {
                    Some(c) => {
                        let _ = write!(out, " | {:>6.3}  {:>6.3} ", c.f1_mean, c.dice_mean);
                    }
                    None => {
                        let _ = write!(out, " | {:>6}  {:>6} ", "-", "-");
                    }
                }
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn training_set(data: &ExperimentData, arm: Arm) -> Vec<LabeledPair> {
    let mut v = data.cohort1_train.clone();
    if arm == Arm::Augmented {
        v.extend(data.synthetic.iter().cloned());
    }
    v
}

/// Trains both arms for every seed with identical settings and scores each
/// model on the Cohort 1 test split and on Cohort 3.
pub fn run_experiment(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentReport> {
    spec.config.validate()?;
    if spec.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    if data.cohort1_train.iter().any(|p| p.image.cohort == Cohort::Synthetic) {
        return Err(Error::InvalidArgument("synthetic samples found in the Cohort 1 training split".into()));
    }
    for (name, set) in [("cohort1 test", &data.cohort1_test), ("cohort3", &data.cohort3)] {
        if set.is_empty() {
            return Err(Error::EmptySplit(format!("{name} evaluation set is empty")));
        }
    }

    let mut runs = Vec::new();
    let mut scores = Vec::new();
    for &seed in &spec.seeds {
        for arm in Arm::ALL {
            let mut cfg = SegTrainConfig { seed, ..spec.config.clone() };
            cfg.checkpoint_dir = spec
                .config
                .checkpoint_dir
                .as_ref()
                .map(|d| d.join(format!("{}_seed{seed}", arm.as_str())));
            let train = training_set(data, arm);
            let trained = train_segmentation(&train, &data.cohort1_val, &cfg)?;
            runs.push(RunRecord {
                arm,
                seed,
                n_train: train.len(),
                cohorts_seen: trained.cohorts_seen(),
                best_epoch: trained.model.best_epoch,
                best_val_dice: trained.model.best_val_dice.unwrap_or(f64::NAN),
            });
            for set in EvalSet::ALL {
                let pairs = match set {
                    EvalSet::Cohort1Test => &data.cohort1_test,
                    EvalSet::Cohort3 => &data.cohort3,
                };
                let r = evaluate(&trained.model, pairs, cfg.threshold)?;
                tracing::info!(?arm, seed, ?set, f1 = r.f1_micro, dice = r.dataset_dice_mean, "experiment score");
                scores.push(RunScore { arm, seed, eval_set: set, f1_micro: r.f1_micro, dice_mean: r.dataset_dice_mean });
            }
        }
    }

    let mut summary = Vec::new();
    for arm in Arm::ALL {
        for set in EvalSet::ALL {
            let cell: Vec<&RunScore> = scores.iter().filter(|s| s.arm == arm && s.eval_set == set).collect();
            let n = cell.len() as f64;
            summary.push(SummaryCell {
                arm,
                eval_set: set,
                f1_mean: cell.iter().map(|s| s.f1_micro).sum::<f64>() / n,
                dice_mean: cell.iter().map(|s| s.dice_mean).sum::<f64>() / n,
            });
        }
    }
    Ok(ExperimentReport {
        aggregation: AGGREGATION_NOTE.into(),
        config_hash: spec.config.hash(),
        seeds: spec.seeds.clone(),
        runs,
        scores,
        summary,
    })
}
