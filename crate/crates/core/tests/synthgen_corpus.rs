use std::fs;
use std::path::Path;

use mpseg_core::dataio::{read_manifest, synth_toy_images, write_toy_corpus, Background, BinaryMask, Cohort, Split, ToyCorpusSpec};
use mpseg_core::inpaint_gan::{GanCheckpoint, GanModels, GanTrainConfig};
use mpseg_core::maskops::{apply_transform, resize_nearest, TransformSampler};
use mpseg_core::synthgen::{generate_corpus, read_provenance, SynthJob};

fn setup(dir: &Path, n_clean: usize) -> SynthJob {
    let cfg = GanTrainConfig { image_size: 32, base_channels: 8, residual_blocks: 1, ..Default::default() };
    let ckpt = GanCheckpoint {
        models: GanModels::new(cfg.arch(), 1).unwrap(),
        epoch: 0,
        config_hash: cfg.hash(),
        history: Vec::new(),
        batch_order: Vec::new(),
    };
    let ckpt_path = dir.join("gan.ckpt");
    ckpt.save(&ckpt_path).unwrap();

    let clean_spec = ToyCorpusSpec { shapes_per_image: (0, 0), ..ToyCorpusSpec::new(n_clean, 40, Background::Debris, Cohort::Cohort2, 2) };
    let clean = write_toy_corpus(&clean_spec, &dir.join("c2")).unwrap();
    let guides: Vec<BinaryMask> = synth_toy_images(&ToyCorpusSpec::new(5, 64, Background::Gradient, Cohort::Cohort1, 3))
        .unwrap()
        .into_iter()
        .map(|t| t.mask)
        .collect();
    SynthJob {
        checkpoint: ckpt_path,
        clean_images: clean,
        guiding_masks: guides,
        per_image_count: 2,
        sampler: TransformSampler::default(),
        output_dir: dir.join("synthetic"),
        seed: 4,
    }
}

#[test]
fn corpus_is_complete_faithful_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let job = setup(dir.path(), 3);
    let m = generate_corpus(&job).unwrap();
    assert_eq!(m.len(), 6);
    assert!(m.entries.iter().all(|e| e.cohort == Cohort::Synthetic && e.split == Split::Unsplit));

    let on_disk = read_manifest(&job.output_dir.join("manifest.json")).unwrap();
    let pairs = on_disk.load_labeled(&on_disk.entries).unwrap();
    let prov = read_provenance(&job.output_dir.join("provenance.jsonl")).unwrap();
    assert_eq!(prov.len(), 6);
    let clean = job.clean_images.load_images(&job.clean_images.entries).unwrap();
    for (pair, p) in pairs.iter().zip(&prov) {
        assert_eq!(pair.image.id, p.sample_id);
        assert!(pair.mask.count_ones() >= job.sampler.min_foreground_pixels);
        let src = clean.iter().find(|c| c.id == p.clean_id).unwrap();
        for (x, y, px) in pair.image.pixels.enumerate_pixels() {
            if !pair.mask.get(x, y) {
                assert_eq!(px, src.pixels.get_pixel(x, y));
            }
        }
        let guide = job.guiding_masks.iter().find(|g| g.id == p.guiding_mask_id).unwrap();
        let rebuilt = apply_transform(&resize_nearest(guide, 40, 40), &p.transform);
        assert_eq!(rebuilt.as_slice(), pair.mask.as_slice());
    }

    let first: Vec<Vec<u8>> = on_disk.entries.iter().map(|e| fs::read(on_disk.resolve(&e.image)).unwrap()).collect();
    generate_corpus(&job).unwrap();
    let again = read_manifest(&job.output_dir.join("manifest.json")).unwrap();
    assert_eq!(again.entries, on_disk.entries);
    let second: Vec<Vec<u8>> = again.entries.iter().map(|e| fs::read(again.resolve(&e.image)).unwrap()).collect();
    assert_eq!(first, second);
    assert_eq!(read_provenance(&job.output_dir.join("provenance.jsonl")).unwrap(), prov);
}

#[test]
fn failures_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut job = setup(dir.path(), 2);
    job.guiding_masks = vec![BinaryMask::from_fn("dot", 40, 40, |x, y| x < 2 && y < 2)];
    assert_eq!(generate_corpus(&job).unwrap_err().code(), "DEGENERATE_MASK");
    assert!(!job.output_dir.exists());

    let job = SynthJob { checkpoint: dir.path().join("missing.ckpt"), ..setup(dir.path(), 2) };
    assert_eq!(generate_corpus(&job).unwrap_err().code(), "IO_ERROR");
    assert!(!job.output_dir.exists());
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().contains("partial")).collect();
    assert!(leftovers.is_empty());
}
