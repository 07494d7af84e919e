use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flashguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flashguard"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let out = flashguard(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_train_detect_mitigate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let summary = ok_json(&["--jobs", "2", "gen-dataset", "--n", "30", "--out", s(&data)]);
    assert_eq!(summary["videos"], 30);
    assert!(data.join("videos/trigger_0029.fgrv").exists());

    let again = dir.path().join("again");
    ok_json(&["--jobs", "1", "gen-dataset", "--n", "30", "--out", s(&again), "--no-videos"]);
    assert_eq!(
        fs::read(data.join("manifest.csv")).unwrap(),
        fs::read(again.join("manifest.csv")).unwrap()
    );

    let model = dir.path().join("model.json");
    ok_json(&["train", "--manifest", s(&data.join("manifest.csv")), "--out", s(&model)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    for key in ["w", "bias", "feature_mean", "feature_std"] {
        assert!(m[key].is_f64(), "{key}");
    }

    let report = ok_json(&["analyze", "--video", s(&data.join("videos/trigger_0000.fgrv"))]);
    for key in ["events", "flashes", "max_flashes_per_second", "flash_frame_indices", "risky"] {
        assert!(report.get(key).is_some(), "{key}");
    }

    // A fixed, low threshold so the array reacts to any flashing video.
    fs::write(&model, r#"{"w":1.0,"bias":-5.0,"feature_mean":0.0,"feature_std":1.0}"#).unwrap();
    let kmodel = dir.path().join("kmodel.json");
    fs::write(&kmodel, r#"{"b0":80.0,"bL":0.0,"ba":0.0,"bb":0.0,"bI":0.0,"pearson_kL":null}"#).unwrap();

    let risky = (0..30)
        .map(|i| data.join(format!("videos/trigger_{i:04}.fgrv")))
        .find(|p| ok_json(&["analyze", "--video", s(p)])["risky"] == true)
        .expect("corpus has a risky video");

    let detect = flashguard(&["detect", "--model", s(&model), "--video", s(&risky)]);
    assert!(detect.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(detect.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 300);
    assert!(lines.iter().any(|l| !l["rects"].as_array().unwrap().is_empty()));

    let out = dir.path().join("mitigated.fgrv");
    let result = ok_json(&[
        "mitigate", "--video", s(&risky), "--model", s(&model), "--kmodel", s(&kmodel), "--out", s(&out),
    ]);
    assert!(result["post_flash_frames"].as_u64().unwrap() < result["pre_flash_frames"].as_u64().unwrap());
    let log = fs::read_to_string(dir.path().join("mitigated.fgrv.masks.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 300);
    let after = ok_json(&["analyze", "--video", s(&out)]);
    assert_eq!(
        after["flash_frame_indices"].as_array().unwrap().len() as u64,
        result["post_flash_frames"].as_u64().unwrap()
    );
}

#[test]
fn sweep_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let inj = dir.path().join("inj");
    ok_json(&["--seed", "3", "gen-injection", "--n-colors", "4", "--intensities", "30,90", "--out", s(&inj)]);
    let samples = dir.path().join("samples.csv");
    let r = ok_json(&["sweep", "--injection-manifest", s(&inj.join("injection.csv")), "--out", s(&samples)]);
    assert_eq!(r["samples"], 8);
    let text = fs::read_to_string(&samples).unwrap();
    assert!(text.starts_with("base_r,base_g,base_b,l,a,b,intensity,min_k\n"));

    // Eight samples are too few to fit five coefficients reliably.
    let out = flashguard(&["fit-k", "--samples", s(&samples), "--out", s(&dir.path().join("k.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 10 samples"));
}

#[test]
fn errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.fgrv");
    let out = flashguard(&["analyze", "--video", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.fgrv"));

    let out = flashguard(&[
        "pipeline", "--out", s(&dir.path().join("run")), "--n-trigger", "10", "--n-train", "8", "--n-test", "8",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds n_trigger"));
    assert!(!dir.path().join("run").exists());
}
