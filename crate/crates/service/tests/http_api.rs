use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use base64::Engine as _;
use mpseg_core::dataio::{
    decode_upload, encode_png_rgb, save_image, synth_toy_images, write_manifest, Background, BinaryMask, Cohort, DatasetManifest,
    LabeledPair, ManifestEntry, Split, ToyCorpusSpec,
};
use mpseg_core::metrics::{confusion, dice, evaluate};
use mpseg_core::readerstudy::Truth;
use mpseg_core::segmodel::{train_segmentation, SegTrainConfig};
use mpseg_service::{router, AppState, ServiceConfig};
use reqwest::multipart::{Form, Part};
use serde_json::Value;

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

struct Trained {
    checkpoint: PathBuf,
    test: Vec<LabeledPair>,
    test_dice: f64,
}

fn toy(n: usize, bg: Background, seed: u64) -> Vec<LabeledPair> {
    synth_toy_images(&ToyCorpusSpec::new(n, 32, bg, Cohort::Cohort1, seed))
        .unwrap()
        .into_iter()
        .map(|t| LabeledPair { image: t.image, mask: t.mask })
        .collect()
}

/// One small model shared by every test in this file.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = SegTrainConfig {
            epochs: 8,
            image_size: 32,
            base_channels: Some(8),
            learning_rate: 2e-3,
            checkpoint_dir: Some(dir.clone()),
            ..Default::default()
        };
        let out = train_segmentation(&toy(64, Background::Gradient, 11), &toy(8, Background::Gradient, 12), &cfg).unwrap();
        let test = toy(8, Background::Gradient, 13);
        let test_dice = evaluate(&out.model, &test, 0.5).unwrap().dataset_dice_mean;
        Trained { checkpoint: dir.join("best.ckpt"), test, test_dice }
    })
}

async fn spawn(cfg: ServiceConfig) -> String {
    let state = AppState::from_config(&cfg).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

async fn with_model() -> String {
    spawn(ServiceConfig { checkpoint: Some(trained().checkpoint.clone()), ..Default::default() }).await
}

async fn upload(base: &str, png: Vec<u8>, threshold: Option<&str>) -> reqwest::Response {
    let mut form = Form::new().part("file", Part::bytes(png).file_name("upload.png"));
    if let Some(t) = threshold {
        form = form.text("threshold", t.to_string());
    }
    reqwest::Client::new().post(format!("{base}/api/segment")).multipart(form).send().await.unwrap()
}

fn decode_mask(b64: &str) -> BinaryMask {
    let png = B64.decode(b64).unwrap();
    BinaryMask::from_gray("m", &image::load_from_memory(&png).unwrap().to_luma8())
}

async fn error_code(r: reqwest::Response) -> String {
    let body: Value = r.json().await.unwrap();
    assert!(body["detail"].is_string(), "error body lacks detail: {body}");
    body["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn segmented_toy_images_match_recorded_test_dice() {
    let t = trained();
    let base = with_model().await;
    let mut scores = Vec::new();
    for pair in &t.test {
        let r = upload(&base, encode_png_rgb(&pair.image.pixels), None).await;
        assert_eq!(r.status(), 200);
        let body: Value = r.json().await.unwrap();
        let mask = decode_mask(body["mask"].as_str().unwrap());
        assert_eq!(mask.dimensions(), pair.image.dimensions());
        assert_eq!(body["threshold_used"], 0.5);
        scores.push(dice(&confusion(&mask, &pair.mask).unwrap()));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean >= t.test_dice - 0.1, "served dice {mean} vs recorded {}", t.test_dice);
}

#[tokio::test]
async fn segment_is_byte_deterministic_and_self_consistent() {
    let base = with_model().await;
    let pair = &trained().test[0];
    let png = encode_png_rgb(&pair.image.pixels);
    let a: Value = upload(&base, png.clone(), Some("0.4")).await.json().await.unwrap();
    let b: Value = upload(&base, png, Some("0.4")).await.json().await.unwrap();
    assert_eq!(a["mask"], b["mask"]);
    assert_eq!(a["threshold_used"], 0.4);
    assert_eq!(a["model_id"], b["model_id"]);

    let mask = decode_mask(a["mask"].as_str().unwrap());
    let stats = mpseg_core::maskops::foreground_stats(&mask);
    assert_eq!(a["coverage_fraction"].as_f64().unwrap(), stats.fraction);
    assert_eq!(a["particle_count"].as_u64().unwrap() as usize, stats.component_count);

    // Threshold via query string is honoured too.
    let form = Form::new().part("file", Part::bytes(encode_png_rgb(&pair.image.pixels)).file_name("u.png"));
    let q: Value = reqwest::Client::new()
        .post(format!("{base}/api/segment?threshold=0.4"))
        .multipart(form)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(q["mask"], a["mask"]);
}

#[tokio::test]
async fn black_image_coverage_matches_returned_mask() {
    let base = with_model().await;
    let black = image::RgbImage::new(64, 64);
    let body: Value = upload(&base, encode_png_rgb(&black), None).await.json().await.unwrap();
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(64), Some(64)));
    let mask = decode_mask(body["mask"].as_str().unwrap());
    assert_eq!(body["coverage_fraction"].as_f64().unwrap(), mask.count_ones() as f64 / 4096.0);
}

#[tokio::test]
async fn bad_uploads_are_rejected_with_codes() {
    let base = with_model().await;
    let tiny = upload(&base, encode_png_rgb(&image::RgbImage::new(1, 1)), None).await;
    assert_eq!(tiny.status(), 400);
    assert_eq!(error_code(tiny).await, "DIMENSION_MISMATCH");

    let junk = upload(&base, b"definitely not an image".to_vec(), None).await;
    assert_eq!(junk.status(), 400);
    assert_eq!(error_code(junk).await, "UNDECODABLE");

    let png = encode_png_rgb(&image::RgbImage::new(40, 40));
    for t in ["0", "1", "1.5", "abc"] {
        let r = upload(&base, png.clone(), Some(t)).await;
        assert_eq!(r.status(), 400, "threshold {t}");
        assert_eq!(error_code(r).await, "INVALID_ARGUMENT");
    }

    let none = reqwest::Client::new()
        .post(format!("{base}/api/segment"))
        .multipart(Form::new().text("threshold", "0.5"))
        .send()
        .await
        .unwrap();
    assert_eq!(none.status(), 400);
    assert_eq!(error_code(none).await, "MISSING_FILE");
}

#[tokio::test]
async fn oversized_upload_is_413() {
    let base = with_model().await;
    let r = upload(&base, vec![0u8; 21 * 1024 * 1024], None).await;
    assert_eq!(r.status(), 413);
    assert_eq!(error_code(r).await, "TOO_LARGE");

    let small = spawn(ServiceConfig { checkpoint: Some(trained().checkpoint.clone()), max_body_mb: 1, ..Default::default() }).await;
    let r = upload(&small, vec![0u8; 2 * 1024 * 1024], None).await;
    assert_eq!(r.status(), 413);
}

/// Checks required keys and primitive types against a schema component.
fn conforms(value: &Value, schema: &Value) -> Result<(), String> {
    for key in schema["required"].as_array().unwrap() {
        let key = key.as_str().unwrap();
        let v = value.get(key).ok_or(format!("missing {key}"))?;
        let types: Vec<&str> = match &schema["properties"][key]["type"] {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => continue,
        };
        let ok = types.iter().any(|t| match *t {
            "string" => v.is_string(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "object" => v.is_object(),
            "array" => v.is_array(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{key} = {v} is not {types:?}"));
        }
    }
    Ok(())
}

#[tokio::test]
async fn health_and_schema() {
    let base = with_model().await;
    let client = reqwest::Client::new();
    let schema: Value = client.get(format!("{base}/api/schema")).send().await.unwrap().json().await.unwrap();
    let comps = &schema["components"]["schemas"];

    let r = client.get(format!("{base}/api/health")).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let h: Value = r.json().await.unwrap();
    assert_eq!(h["status"], "ok");
    assert!(h["model_id"].as_str().unwrap().starts_with("unet-"));
    conforms(&h, &comps["Health"]).unwrap();

    let seg: Value = upload(&base, encode_png_rgb(&image::RgbImage::new(48, 40)), None).await.json().await.unwrap();
    conforms(&seg, &comps["SegmentResponse"]).unwrap();
    assert_eq!(seg["model_id"], h["model_id"]);

    let missing = spawn(ServiceConfig { checkpoint: Some("/nonexistent/best.ckpt".into()), ..Default::default() }).await;
    let r = client.get(format!("{missing}/api/health")).send().await.unwrap();
    assert_eq!(r.status(), 503);
    let h: Value = r.json().await.unwrap();
    assert_eq!(h["status"], "model_not_loaded");
    assert!(h["model_id"].is_null());
    conforms(&h, &comps["Health"]).unwrap();

    let r = upload(&missing, encode_png_rgb(&image::RgbImage::new(48, 48)), None).await;
    assert_eq!(r.status(), 503);
    let body: Value = r.json().await.unwrap();
    conforms(&body, &comps["Error"]).unwrap();
    assert_eq!(body["error"], "MODEL_NOT_LOADED");

    let r = client.get(format!("{base}/api/nope")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(error_code(r).await, "NOT_FOUND");
}

/// Pools whose images are distinguishable by pixel content alone; returns
/// the manifest paths and a content-hash -> truth lookup for the responder.
fn study_pools(dir: &Path, n: usize) -> (PathBuf, PathBuf, HashMap<Vec<u8>, Truth>) {
    let mut lookup = HashMap::new();
    let mut write = |name: &str, truth: Truth, salt: u8| {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).unwrap();
        let entries = (0..n)
            .map(|i| {
                let file = format!("{name}_{i:03}.png");
                let img = image::RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 8) as u8 ^ salt, (y * 8) as u8, i as u8]));
                save_image(&img, &sub.join(&file)).unwrap();
                lookup.insert(img.into_raw(), truth);
                ManifestEntry { image: file, mask: None, cohort: Cohort::Cohort1, split: Split::Unsplit }
            })
            .collect();
        let path = sub.join("manifest.json");
        write_manifest(&DatasetManifest::new(&sub, 0, entries), &path).unwrap();
        path
    };
    let real = write("c1_real", Truth::Real, 0);
    let generated = write("syn_generated", Truth::Generated, 0x55);
    (real, generated, lookup)
}

fn flip(t: Truth) -> Truth {
    match t {
        Truth::Real => Truth::Generated,
        Truth::Generated => Truth::Real,
    }
}

#[tokio::test]
async fn two_hundred_trial_study_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (real, generated, lookup) = study_pools(dir.path(), 110);
    let base = spawn(ServiceConfig { session_dir: Some(dir.path().join("sessions")), ..Default::default() }).await;
    let client = reqwest::Client::new();

    let r = client
        .post(format!("{base}/api/study/sessions"))
        .json(&serde_json::json!({"real_manifest": real, "generated_manifest": generated, "n_per_class": 100, "seed": 7}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 201);
    let created: Value = r.json().await.unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    assert_eq!(created["n_trials"], 200);

    let mut wire = Vec::new();
    let mut answered = 0;
    loop {
        let raw = client.get(format!("{base}/api/study/sessions/{id}/next")).send().await.unwrap().text().await.unwrap();
        let body: Value = serde_json::from_str(&raw).unwrap();
        if body["done"] == true {
            break;
        }
        wire.push(raw);
        let trial = body["trial_index"].as_u64().unwrap();
        let pixels = image::load_from_memory(&B64.decode(body["image_png_base64"].as_str().unwrap()).unwrap())
            .unwrap()
            .to_rgb8()
            .into_raw();
        let truth = lookup[&pixels];
        // First 136 answered correctly, the rest wrong.
        let answer = if answered < 136 { truth } else { flip(truth) };
        if answered == 50 {
            let r = client.get(format!("{base}/api/study/sessions/{id}/report")).send().await.unwrap();
            assert_eq!(r.status(), 409);
            assert_eq!(error_code(r).await, "SESSION_INCOMPLETE");
        }
        let r = client
            .post(format!("{base}/api/study/sessions/{id}/responses"))
            .json(&serde_json::json!({"trial_index": trial, "answer": answer}))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
        answered += 1;
        if answered == 1 {
            let dup = client
                .post(format!("{base}/api/study/sessions/{id}/responses"))
                .json(&serde_json::json!({"trial_index": trial, "answer": "REAL"}))
                .send()
                .await
                .unwrap();
            assert_eq!(dup.status(), 409);
            assert_eq!(error_code(dup).await, "DUPLICATE_RESPONSE");
        }
    }
    assert_eq!(answered, 200);

    let r = client.get(format!("{base}/api/study/sessions/{id}/report")).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let report: Value = r.json().await.unwrap();
    assert_eq!(report["accuracy"].as_f64().unwrap(), 0.68);
    assert_eq!(report["correct"], 136);

    // Still done after completion.
    let again: Value = client.get(format!("{base}/api/study/sessions/{id}/next")).send().await.unwrap().json().await.unwrap();
    assert_eq!(again["done"], true);

    audit_wire(&wire, &lookup);
}

/// Nothing on the wire may correlate with the hidden labels.
fn audit_wire(wire: &[String], lookup: &HashMap<Vec<u8>, Truth>) {
    let allowed: BTreeSet<&str> = ["done", "trial_index", "n_trials", "answered", "image_png_base64"].into();
    for raw in wire {
        let v: Value = serde_json::from_str(raw).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert!(keys.is_subset(&allowed), "unexpected keys {keys:?}");
        let mut visible = v.clone();
        visible.as_object_mut().unwrap().remove("image_png_base64");
        let text = visible.to_string().to_lowercase();
        for needle in ["real", "generated", "syn", "c1_", "truth", ".png", "/"] {
            assert!(!text.contains(needle), "{needle:?} leaked in {text}");
        }
        let png = B64.decode(v["image_png_base64"].as_str().unwrap()).unwrap();
        assert_eq!(png_chunks(&png), ["IHDR", "IDAT", "IEND"]);
        let img = decode_upload("wire", &png).unwrap();
        assert!(lookup.contains_key(img.pixels.as_raw()));
    }
}

/// Distinct chunk types in file order.
fn png_chunks(png: &[u8]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut i = 8;
    while i + 8 <= png.len() {
        let len = u32::from_be_bytes(png[i..i + 4].try_into().unwrap()) as usize;
        let kind = String::from_utf8_lossy(&png[i + 4..i + 8]).into_owned();
        if out.last() != Some(&kind) {
            out.push(kind);
        }
        i += 12 + len;
    }
    out
}

#[tokio::test]
async fn study_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (real, generated, _) = study_pools(dir.path(), 3);
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();

    let r = client.get(format!("{base}/api/study/sessions/nope/next")).send().await.unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(error_code(r).await, "UNKNOWN_SESSION");
    let r = client.get(format!("{base}/api/study/sessions/nope/report")).send().await.unwrap();
    assert_eq!(r.status(), 404);

    let r = client
        .post(format!("{base}/api/study/sessions"))
        .json(&serde_json::json!({"real_manifest": real, "generated_manifest": generated, "n_per_class": 5, "seed": 1}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(error_code(r).await, "POOL_TOO_SMALL");

    let r = client
        .post(format!("{base}/api/study/sessions"))
        .header("content-type", "application/json")
        .body("{\"real_manifest\": 3}")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(error_code(r).await, "BAD_REQUEST");

    let created: Value = client
        .post(format!("{base}/api/study/sessions"))
        .json(&serde_json::json!({"real_manifest": real, "generated_manifest": generated, "n_per_class": 2, "seed": 1}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created["session_id"].as_str().unwrap();
    let r = client
        .post(format!("{base}/api/study/sessions/{id}/responses"))
        .json(&serde_json::json!({"trial_index": 99, "answer": "REAL"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(error_code(r).await, "UNKNOWN_TRIAL");
}
