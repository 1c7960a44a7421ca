use std::path::{Path, PathBuf};

use mpseg_core::dataio::{
    load_mask, read_manifest, split_dataset, write_manifest, write_toy_corpus, DatasetManifest, LabeledPair, ManifestEntry, Split,
};
use mpseg_core::inpaint_gan::train_gan;
use mpseg_core::metrics::evaluate;
use mpseg_core::readerstudy::{create_session, score_session, NextTrial, PoolItem, Truth};
use mpseg_core::segmodel::{run_experiment, train_segmentation, ExperimentData, ExperimentSpec, SegModel};
use mpseg_core::synthgen::{generate_corpus, SynthJob};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::RunDir;

/// Absolute form of an input path, so the config hash does not depend on the
/// working directory.
fn input(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Creates the run directory, runs `body`, and removes the directory again
/// if `body` fails.
fn in_run<T: Serialize>(out: &Path, command: &str, resolved: &T, body: impl FnOnce(&RunDir) -> CliResult<()>) -> CliResult<PathBuf> {
    let run = RunDir::create(out, command, resolved)?;
    tracing::info!(run = %run.path.display(), hash = %run.hash, "{command}");
    match body(&run) {
        Ok(()) => Ok(run.path),
        Err(e) => {
            run.discard();
            Err(e)
        }
    }
}

fn labeled_in(manifest: &DatasetManifest, split: Option<Split>) -> CliResult<Vec<LabeledPair>> {
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect();
    Ok(manifest.load_labeled(entries)?)
}

/// The train split when the manifest has one, otherwise every entry.
fn training_entries(manifest: &DatasetManifest) -> Vec<&ManifestEntry> {
    if manifest.entries.iter().any(|e| e.split == Split::Train) {
        manifest.entries_in(Split::Train).collect()
    } else {
        manifest.entries.iter().collect()
    }
}

pub fn toy_corpus(out: &Path, cfg: &RunConfig) -> CliResult<PathBuf> {
    let spec = cfg.toy_corpus.spec();
    spec.validate()?;
    let resolved = json!({"command": "toy-corpus", "toy_corpus": cfg.toy_corpus});
    in_run(out, "toy-corpus", &resolved, |run| {
        let m = write_toy_corpus(&spec, &run.join("corpus"))?;
        println!("wrote {} images to {}", m.len(), run.join("corpus").display());
        Ok(())
    })
}

pub fn split(out: &Path, cfg: &RunConfig, manifest: &Path) -> CliResult<PathBuf> {
    cfg.split.validate()?;
    let m = read_manifest(manifest)?;
    let seed = cfg.split_seed();
    let resolved = json!({"command": "split", "manifest": input(manifest), "ratios": cfg.split, "seed": seed});
    in_run(out, "split", &resolved, |run| {
        let split = split_dataset(&m, cfg.split, seed)?;
        let path = run.join("manifest.json");
        write_manifest(&split, &path)?;
        let count = |s| split.entries_in(s).count();
        println!("train {} / val {} / test {}", count(Split::Train), count(Split::Val), count(Split::Test));
        Ok(())
    })
}

pub fn train_gan_cmd(out: &Path, cfg: &RunConfig, manifest: &Path) -> CliResult<PathBuf> {
    cfg.gan.validate()?;
    let resolved = json!({"command": "train-gan", "manifest": input(manifest), "gan": cfg.gan});
    in_run(out, "train-gan", &resolved, |run| {
        let m = read_manifest(manifest)?;
        let pairs = m.load_labeled(training_entries(&m))?;
        let gcfg = mpseg_core::inpaint_gan::GanTrainConfig { checkpoint_dir: Some(run.path.clone()), ..cfg.gan.clone() };
        let ckpt = train_gan(&pairs, &gcfg)?;
        run.write_json("history.json", &ckpt.history)?;
        if let Some(last) = ckpt.history.last() {
            println!("epoch {}: loss_g {:.4} loss_d {:.4} d_accuracy {:.3}", last.epoch, last.loss_g, last.loss_d, last.d_accuracy);
        }
        println!("checkpoint: {}", run.join("latest.ckpt").display());
        Ok(())
    })
}

pub fn generate(out: &Path, cfg: &RunConfig, checkpoint: &Path, clean: &Path, guides: &Path) -> CliResult<PathBuf> {
    cfg.synth.sampler.validate()?;
    let resolved = json!({
        "command": "generate",
        "checkpoint": input(checkpoint),
        "clean": input(clean),
        "guides": input(guides),
        "synth": cfg.synth,
    });
    in_run(out, "generate", &resolved, |run| {
        let guide_manifest = read_manifest(guides)?;
        let guiding_masks = training_entries(&guide_manifest)
            .into_iter()
            .map(|e| {
                let rel = e.mask.as_ref().ok_or_else(|| mpseg_core::Error::MissingMask(e.id()))?;
                Ok(load_mask(&guide_manifest.resolve(rel))?.with_id(e.id()))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let job = SynthJob {
            checkpoint: checkpoint.to_path_buf(),
            clean_images: read_manifest(clean)?,
            guiding_masks,
            per_image_count: cfg.synth.per_image_count,
            sampler: cfg.synth.sampler,
            output_dir: run.join("synthetic"),
            seed: cfg.synth.seed,
        };
        let m = generate_corpus(&job)?;
        println!("wrote {} synthetic samples to {}", m.len(), job.output_dir.display());
        Ok(())
    })
}

pub fn train_seg(out: &Path, cfg: &RunConfig, manifest: &Path, synthetic: Option<&Path>) -> CliResult<PathBuf> {
    cfg.seg.validate()?;
    let resolved = json!({
        "command": "train-seg",
        "manifest": input(manifest),
        "synthetic": synthetic.map(input),
        "seg": cfg.seg,
    });
    in_run(out, "train-seg", &resolved, |run| {
        let m = read_manifest(manifest)?;
        let mut train = labeled_in(&m, Some(Split::Train))?;
        if let Some(s) = synthetic {
            let sm = read_manifest(s)?;
            train.extend(labeled_in(&sm, None)?);
        }
        let val = labeled_in(&m, Some(Split::Val))?;
        let scfg = mpseg_core::segmodel::SegTrainConfig { checkpoint_dir: Some(run.path.clone()), ..cfg.seg.clone() };
        let out = train_segmentation(&train, &val, &scfg)?;
        run.write_json("history.json", &out.history)?;
        println!(
            "best epoch {} val dice {:.4}",
            out.model.best_epoch,
            out.model.best_val_dice.unwrap_or(f64::NAN)
        );
        let test = labeled_in(&m, Some(Split::Test))?;
        if !test.is_empty() {
            let report = evaluate(&out.model, &test, scfg.threshold)?;
            run.write_json("eval.json", &report)?;
            println!("test f1 {:.4} dice {:.4}", report.f1_micro, report.dataset_dice_mean);
        }
        println!("checkpoint: {}", run.join("best.ckpt").display());
        Ok(())
    })
}

pub fn experiment(out: &Path, cfg: &RunConfig, cohort1: &Path, synthetic: &Path, cohort3: &Path) -> CliResult<PathBuf> {
    cfg.seg.validate()?;
    let resolved = json!({
        "command": "experiment",
        "cohort1": input(cohort1),
        "synthetic": input(synthetic),
        "cohort3": input(cohort3),
        "seg": cfg.seg,
        "experiment": cfg.experiment,
    });
    in_run(out, "experiment", &resolved, |run| {
        let c1 = read_manifest(cohort1)?;
        let data = ExperimentData {
            cohort1_train: labeled_in(&c1, Some(Split::Train))?,
            cohort1_val: labeled_in(&c1, Some(Split::Val))?,
            cohort1_test: labeled_in(&c1, Some(Split::Test))?,
            synthetic: labeled_in(&read_manifest(synthetic)?, None)?,
            cohort3: labeled_in(&read_manifest(cohort3)?, None)?,
        };
        let spec = ExperimentSpec {
            config: mpseg_core::segmodel::SegTrainConfig { checkpoint_dir: Some(run.join("models")), ..cfg.seg.clone() },
            seeds: cfg.experiment.seeds.clone(),
        };
        let report = run_experiment(&spec, &data)?;
        run.write_json("report.json", &report)?;
        let table = report.render_table();
        run.write_text("table.txt", &table)?;
        print!("{table}");
        Ok(())
    })
}

pub fn eval(out: &Path, checkpoint: &Path, manifest: &Path, split: Option<Split>, threshold: f64) -> CliResult<PathBuf> {
    let resolved = json!({
        "command": "eval",
        "checkpoint": input(checkpoint),
        "manifest": input(manifest),
        "split": split,
        "threshold": threshold,
    });
    in_run(out, "eval", &resolved, |run| {
        let model = SegModel::load(checkpoint, None)?;
        let pairs = labeled_in(&read_manifest(manifest)?, split)?;
        let report = evaluate(&model, &pairs, threshold)?;
        run.write_json("eval.json", &report)?;
        println!(
            "{} images: f1 {:.4} dice {:.4} precision {:.4} recall {:.4}",
            report.n_images, report.f1_micro, report.dataset_dice_mean, report.precision_micro, report.recall_micro
        );
        Ok(())
    })
}

/// Simulated reader: answers exactly `round(accuracy * n)` trials correctly,
/// namely the first ones in the (already shuffled) deck.
pub fn study_sim(out: &Path, cfg: &RunConfig, real: &Path, generated: &Path) -> CliResult<PathBuf> {
    let study = &cfg.study;
    if !(0.0..=1.0).contains(&study.accuracy) {
        return Err(CliError::Domain(mpseg_core::Error::InvalidArgument(format!(
            "accuracy must lie in [0, 1], got {}",
            study.accuracy
        ))));
    }
    let resolved = json!({"command": "study-sim", "real": input(real), "generated": input(generated), "study": study});
    in_run(out, "study-sim", &resolved, |run| {
        let real_pool = PoolItem::from_manifest(&read_manifest(real)?);
        let gen_pool = PoolItem::from_manifest(&read_manifest(generated)?);
        let mut session = create_session(&real_pool, &gen_pool, study.n_per_class, study.seed)?;
        session.persist_to(&run.join("sessions").join(format!("{}.jsonl", session.session_id)))?;
        let n_correct = (study.accuracy * session.n_trials() as f64).round() as usize;
        let mut answered = 0;
        while let NextTrial::Trial(p) = session.next_trial()? {
            let truth = session.trials[p.trial_index].truth;
            let answer = match (answered < n_correct, truth) {
                (true, t) => t,
                (false, Truth::Real) => Truth::Generated,
                (false, Truth::Generated) => Truth::Real,
            };
            session.submit_response(p.trial_index, answer)?;
            answered += 1;
        }
        let report = score_session(&session)?;
        run.write_json("report.json", &report)?;
        println!(
            "accuracy {:.3} ({}/{}); real correct {:.3}, generated correct {:.3}",
            report.accuracy, report.correct, report.n_trials, report.per_class.real_correct_rate, report.per_class.generated_correct_rate
        );
        Ok(())
    })
}
