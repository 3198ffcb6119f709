use std::path::Path;
use std::process::Command;

use invdesign_core::workflow::{read_manifest, PipelineConfig, MANIFEST_FILE, REPORT_TEXT_FILE};

fn invdesign(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_invdesign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = invdesign(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn smoke_config(dir: &Path) -> String {
    let path = dir.join("smoke.json");
    std::fs::write(&path, serde_json::to_string_pretty(&PipelineConfig::smoke()).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn print_config_is_the_default() {
    let text = ok(&["print-config"]);
    let parsed: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, PipelineConfig::default());
}

#[test]
fn partial_config_falls_back_to_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 5, "n_oracle": 64, "n_train": 50}"#).unwrap();
    let out = dir.path().join("run");
    ok(&["datagen", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.config.n_augment, PipelineConfig::default().n_augment);
    let csv = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 65);
}

#[test]
fn manifest_rerun_reproduces_every_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = smoke_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let (a_s, b_s, c_s) = (a.to_str().unwrap(), b.to_str().unwrap(), c.to_str().unwrap());

    let text = ok(&["pipeline", "--config", &config, "--seed", "3", "--out", a_s]);
    assert!(text.contains("MAE comparison"));
    let manifest = a.join(MANIFEST_FILE);
    ok(&["pipeline", "--from-manifest", manifest.to_str().unwrap(), "--out", b_s]);

    ok(&["datagen", "--config", &config, "--seed", "3", "--out", c_s]);
    for stage in ["train-surrogates", "augment", "train-inn", "generate", "validate", "baseline", "report"] {
        ok(&[stage, "--out", c_s]);
    }

    let ma = read_manifest(&a).unwrap();
    assert!(ma.files.len() > 27 * 2, "candidate files are hashed");
    assert!(!ma.files.contains_key("timings.json"));
    for other in [&b, &c] {
        let m = read_manifest(other).unwrap();
        assert_eq!(m.config, ma.config);
        assert_eq!(m.files, ma.files);
    }
    assert_eq!(
        std::fs::read_to_string(a.join(REPORT_TEXT_FILE)).unwrap(),
        std::fs::read_to_string(b.join(REPORT_TEXT_FILE)).unwrap()
    );

    ok(&["pipeline", "--config", &config, "--seed", "4", "--out", b_s, "--skip-baseline"]);
    let mb = read_manifest(&b).unwrap();
    assert_ne!(mb.files["dataset.csv"], ma.files["dataset.csv"]);
}

#[test]
fn stage_without_inputs_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = invdesign(&["generate", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Error"), "{err}");
}

#[test]
fn serve_reports_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let config = smoke_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    ok(&["datagen", "--config", &config, "--out", run_s]);
    for stage in ["train-surrogates", "augment", "train-inn"] {
        ok(&[stage, "--out", run_s]);
    }
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let out = invdesign(&["serve", "--out", run_s, "--addr", &addr]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("binding"));
}
