use std::path::Path;

use base64::Engine as _;
use mpseg_core::dataio::save_image;
use mpseg_core::readerstudy::{create_session, score_session, NextTrial, PoolItem, StudySession, Truth};

fn pool(dir: &Path, prefix: &str, n: usize) -> Vec<PoolItem> {
    (0..n)
        .map(|i| {
            let id = format!("{prefix}_{i:03}");
            let path = dir.join(format!("{id}.png"));
            let img = image::RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 8) as u8, (y * 8) as u8, i as u8]));
            save_image(&img, &path).unwrap();
            PoolItem { image_id: id, path }
        })
        .collect()
}

/// Answers until done; `answer` sees the hidden trial record.
fn run(s: &mut StudySession, answer: impl Fn(usize, Truth) -> Truth) -> Vec<String> {
    let mut wire = Vec::new();
    loop {
        match s.next_trial().unwrap() {
            NextTrial::Done => return wire,
            NextTrial::Trial(p) => {
                wire.push(serde_json::to_string(&p).unwrap());
                let truth = s.trials[p.trial_index].truth;
                s.submit_response(p.trial_index, answer(p.trial_index, truth)).unwrap();
            }
        }
    }
}

fn flip(t: Truth) -> Truth {
    match t {
        Truth::Real => Truth::Generated,
        Truth::Generated => Truth::Real,
    }
}

#[test]
fn two_hundred_trial_deck() {
    let dir = tempfile::tempdir().unwrap();
    let real = pool(dir.path(), "c1_real", 120);
    let generated = pool(dir.path(), "syn_c2", 110);
    let s = create_session(&real, &generated, 100, 42).unwrap();
    assert_eq!(s.n_trials(), 200);
    assert_eq!(s.trials.iter().filter(|t| t.truth == Truth::Real).count(), 100);
    let again = create_session(&real, &generated, 100, 42).unwrap();
    assert_eq!(s.trials, again.trials);
    let mut ids: Vec<_> = s.trials.iter().map(|t| &t.image_id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 200);
}

#[test]
fn scripted_responders_score_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let real = pool(dir.path(), "c1_real", 100);
    let generated = pool(dir.path(), "syn_c2", 100);

    let mut s = create_session(&real, &generated, 100, 1).unwrap();
    run(&mut s, |i, t| if i < 136 { t } else { flip(t) });
    let r = score_session(&s).unwrap();
    assert_eq!(r.correct, 136);
    assert_eq!(r.accuracy, 0.68);
    assert_eq!(r.confusion[0][0] + r.confusion[1][1], r.correct);
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 200);

    let mut s = create_session(&real, &generated, 100, 2).unwrap();
    run(&mut s, |_, _| Truth::Real);
    let r = score_session(&s).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!((r.per_class.real_correct_rate, r.per_class.generated_correct_rate), (1.0, 0.0));

    let mut s = create_session(&real, &generated, 100, 3).unwrap();
    run(&mut s, |_, t| t);
    assert_eq!(score_session(&s).unwrap().accuracy, 1.0);
}

#[test]
fn payloads_carry_no_truth() {
    let dir = tempfile::tempdir().unwrap();
    let real = pool(dir.path(), "c1_real", 20);
    let generated = pool(dir.path(), "syn_c2", 20);
    let mut s = create_session(&real, &generated, 20, 5).unwrap();
    let trials = s.trials.clone();
    let wire = run(&mut s, |_, t| t);
    assert_eq!(wire.len(), 40);
    let forbidden = ["truth", "REAL", "GENERATED", "cohort", "synthetic", "syn_", "c1_", "path", "image_id", ".png"];
    for (line, trial) in wire.iter().zip(&trials) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 4, "{keys:?}");
        for (k, val) in obj {
            for f in forbidden {
                assert!(!k.contains(f), "key {k} contains {f}");
                if k != "image_png_base64" {
                    assert!(!val.to_string().contains(f), "{k}={val}");
                }
            }
        }
        let png = base64::engine::general_purpose::STANDARD.decode(obj["image_png_base64"].as_str().unwrap()).unwrap();
        for chunk in [&b"tEXt"[..], b"iTXt", b"zTXt", b"eXIf"] {
            assert!(!png.windows(4).any(|w| w == chunk));
        }
        assert!(!png.windows(trial.image_id.len()).any(|w| w == trial.image_id.as_bytes()));
        let decoded = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(decoded, image::open(&trial.image_path).unwrap().to_rgb8());
    }
}
