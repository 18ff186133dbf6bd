use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "sim.n_patients=60",
    "sim.icuai_daily_rate=0.15",
    "sim.mean_los_hours=150",
    "cnn.blocks=2",
    "cnn.filters=4",
    "cnn.epochs=2",
    "cnn.folds=3",
    "landmark.n=9",
    "bootstrap.replicates=50",
    "evaluate.quartile_landmarks=48,96",
    "saliency.days=3,5",
    "saliency.export_per_day=2",
];

const STAGES: &[&[&str]] = &[
    &["simulate"],
    &["extract"],
    &["train-cnn"],
    &["score"],
    &["landmark-fit"],
    &["evaluate"],
    &["heatmap"],
    &["saliency"],
    &["cluster"],
    &["report"],
];

fn deeplm(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deeplm"));
    cmd.args(args).arg("--out-dir").arg(dir).args(["--seed", "4"]);
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = deeplm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path, stage: &str) -> Value {
    serde_json::from_slice(&fs::read(dir.join(stage).join("manifest.json")).unwrap()).unwrap()
}

fn listed(m: &Value, key: &str) -> Vec<(String, String)> {
    m[key]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect()
}

fn manifests(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() == "manifest.json" {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_reruns_to_identical_digests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for stage in STAGES {
        ok(a.path(), stage);
        ok(b.path(), stage);
    }
    let found = manifests(a.path());
    assert!(found.len() >= STAGES.len(), "{found:?}");
    assert_eq!(found, manifests(b.path()));
    for rel in &found {
        let stage = rel.parent().unwrap().to_str().unwrap();
        let (ma, mb) = (manifest(a.path(), stage), manifest(b.path(), stage));
        let outputs = listed(&ma, "outputs");
        assert!(!outputs.is_empty(), "{stage} wrote nothing");
        assert_eq!(outputs, listed(&mb, "outputs"), "{stage}");
        for (path, digest) in &outputs {
            let bytes = fs::read(a.path().join(path)).unwrap();
            assert_eq!(&sha256_hex(&bytes), digest, "{path}");
        }
    }
    let report = fs::read_to_string(a.path().join("report/report.md")).unwrap();
    for section in ["## Cohort", "## CNN cross-validation", "## Landmark models", "## Saliency clusters"] {
        assert!(report.contains(section), "{section} missing");
    }
    for svg in ["evaluate/compare/auroc_by_landmark.svg", "heatmap/pi2/impact.svg"] {
        assert!(fs::read_to_string(a.path().join(svg)).unwrap().starts_with("<svg"));
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    deeplm_cli::manifest::sha256_hex(bytes)
}

fn covariate_run() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for stage in &STAGES[..4] {
        ok(dir.path(), stage);
    }
    dir
}

#[test]
fn covariate_only_model_never_reads_scores() {
    let dir = covariate_run();
    fs::remove_file(dir.path().join("scores/scores.csv")).unwrap();
    ok(dir.path(), &["landmark-fit", "--model", "pi1"]);
    ok(dir.path(), &["evaluate", "--model", "pi1"]);
    for stage in ["landmark/pi1", "evaluate/pi1"] {
        let inputs = listed(&manifest(dir.path(), stage), "inputs");
        assert!(!inputs.is_empty());
        assert!(inputs.iter().all(|(p, _)| !p.starts_with("scores/")), "{stage}: {inputs:?}");
    }
}

#[test]
fn score_model_refuses_missing_or_altered_scores() {
    let dir = covariate_run();
    let scores = dir.path().join("scores/scores.csv");
    let original = fs::read(&scores).unwrap();
    let mut altered = original.clone();
    let last = altered.len() - 2;
    altered[last] = if altered[last] == b'1' { b'2' } else { b'1' };
    fs::write(&scores, &altered).unwrap();
    let out = deeplm(dir.path(), &["landmark-fit", "--model", "pi2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scores"));

    fs::remove_file(&scores).unwrap();
    let out = deeplm(dir.path(), &["landmark-fit", "--model", "pi2"]);
    assert_eq!(out.status.code(), Some(3));

    fs::write(&scores, &original).unwrap();
    ok(dir.path(), &["landmark-fit", "--model", "pi2"]);
}

#[test]
fn later_stages_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeplm(dir.path(), &["extract"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate"));
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeplm(dir.path(), &["simulate", "--set", "sim.n_patient=10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.n_patient"));
    let out = deeplm(dir.path(), &["simulate", "--set", "cnn.precision=f16"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nsim.missing_rate = 1.5\n").unwrap();
    let out = deeplm(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("cohort").exists());
}

#[test]
fn config_subcommand_prints_schema_and_resolved_values() {
    let out = Command::new(env!("CARGO_BIN_EXE_deeplm")).arg("config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cnn.filters") && text.contains("128"));
    let dir = tempfile::tempdir().unwrap();
    let out = deeplm(dir.path(), &["config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sim.n_patients = 60"), "{text}");
    assert!(text.contains("seed = 4"));
}
