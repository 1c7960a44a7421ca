//! The declarative run configuration. Every section is optional in the file;
//! missing fields take the defaults shown by `mpseg default-config`.

use std::path::Path;

use mpseg_core::dataio::{Background, Cohort, ShapeMix, SplitRatios, ToyCorpusSpec};
use mpseg_core::inpaint_gan::GanTrainConfig;
use mpseg_core::maskops::TransformSampler;
use mpseg_core::segmodel::SegTrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every per-section seed when set.
    pub seed: Option<u64>,
    pub toy_corpus: ToySection,
    pub split: SplitRatios,
    pub gan: GanTrainConfig,
    pub synth: SynthSection,
    pub seg: SegTrainConfig,
    pub experiment: ExperimentSection,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            toy_corpus: ToySection::default(),
            split: SplitRatios::DEFAULT,
            gan: GanTrainConfig::default(),
            synth: SynthSection::default(),
            seg: SegTrainConfig::default(),
            experiment: ExperimentSection::default(),
            study: StudySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub n_images: usize,
    pub image_size: u32,
    pub background: Background,
    pub cohort: Cohort,
    pub shapes_per_image: (u32, u32),
    pub shape_mix: ShapeMix,
    pub seed: u64,
}

impl Default for ToySection {
    fn default() -> Self {
        let s = ToyCorpusSpec::new(64, 64, Background::Gradient, Cohort::Cohort1, 0);
        ToySection {
            n_images: s.n_images,
            image_size: s.image_size,
            background: s.background,
            cohort: s.cohort,
            shapes_per_image: s.shapes_per_image,
            shape_mix: s.shape_mix,
            seed: s.seed,
        }
    }
}

impl ToySection {
    pub fn spec(&self) -> ToyCorpusSpec {
        ToyCorpusSpec {
            n_images: self.n_images,
            image_size: self.image_size,
            shape_mix: self.shape_mix,
            background: self.background,
            shapes_per_image: self.shapes_per_image,
            cohort: self.cohort,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub per_image_count: usize,
    pub sampler: TransformSampler,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { per_image_count: 1, sampler: TransformSampler::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { seeds: (0..5).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub n_per_class: usize,
    /// Fraction of trials the simulated reader answers correctly.
    pub accuracy: f64,
    pub seed: u64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection { n_per_class: 100, accuracy: 0.68, seed: 0 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}: {e} (run `mpseg default-config` for the accepted layout)", path.display()))
        })
    }

    /// Pushes the global seed into every section.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        let Some(seed) = seed.or(self.seed) else { return };
        self.seed = Some(seed);
        self.toy_corpus.seed = seed;
        self.gan.seed = seed;
        self.synth.seed = seed;
        self.seg.seed = seed;
        self.study.seed = seed;
    }

    /// The seed `split` uses.
    pub fn split_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seg": {"epochs": 3}, "seed": 9}"#).unwrap();
        assert_eq!(c.seg.epochs, 3);
        assert_eq!(c.seg.batch_size, SegTrainConfig::default().batch_size);
        assert_eq!(c.gan, GanTrainConfig::default());
        let mut c = c;
        c.apply_seed(None);
        assert_eq!((c.gan.seed, c.seg.seed, c.study.seed), (9, 9, 9));
        c.apply_seed(Some(4));
        assert_eq!(c.toy_corpus.seed, 4);
    }

    #[test]
    fn default_round_trips_and_unknown_keys_fail() {
        let d = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<RunConfig>(r#"{"segg": {}}"#).is_err());
    }
}
