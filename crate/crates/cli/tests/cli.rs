use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "name": "small",
    "grid": { "q": [-6, 6], "p": [-6, 6], "nq": 32, "np": 32 },
    "channels": [ { "observable": "q", "beta": 1, "k": 0.5, "omega": 1, "mode": "read" } ],
    "initial": { "kind": "gaussian", "mean": [0, 0], "cov": [[0.5, 0], [0, 0.5]] },
    "evolution": { "dt": 0.01, "t_end": 0.05, "seed": 3 },
    "output": { "snapshot_every": 0.02 }
}"#;

fn phasemeas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasemeas")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.json"))
}

#[test]
fn config_error_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &SMALL.replace("\"dt\": 0.01", "\"dt\": -0.01"));
    let out = dir.path().join("run");
    let o = phasemeas(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("evolution.dt"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = phasemeas(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn cfl_violation_reports_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    // h = 0.375, D = k / 2 beta = 0.25: bound 0.4 h^2 / D = 0.225.
    let text = SMALL
        .replace("\"seed\": 3", "\"seed\": 3, \"substeps_diffusion\": 1")
        .replace("\"dt\": 0.01", "\"dt\": 0.5");
    let cfg = write_config(dir.path(), "cfl.json", &text);
    let out = dir.path().join("run");
    let o = phasemeas(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("2.2500e-1"), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn liouville_scenario_keeps_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig1b");
    let o = phasemeas(&["run", "--config", bundled("fig1b").to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert!(lines.next().unwrap().starts_with("t,S,"));
    let s: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(s.len(), 401);
    let spread = s.iter().map(|v| (v - s[0]).abs()).fold(0.0, f64::max);
    assert!(spread <= 1e-3, "{spread}");

    let v = phasemeas(&["verify", "--config", bundled("fig1b").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stdout));
    assert!(String::from_utf8_lossy(&v.stdout).contains("PASS liouville_entropy"));
}

#[test]
fn verify_refuses_a_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("run");
    let o = phasemeas(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["overrides"]["seed"], 11);

    let edited = write_config(dir.path(), "edited.json", &SMALL.replace("\"k\": 0.5", "\"k\": 0.6"));
    let v = phasemeas(&["verify", "--config", edited.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1), "{}", stderr(&v));
    assert!(stderr(&v).contains("does not match"), "{}", stderr(&v));
}

#[test]
fn sweep_isolates_points() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "\"output\"",
        "\"sweep\": { \"evolution.seed\": [1, 2, 3] },\n    \"output\"",
    );
    let cfg = write_config(dir.path(), "sweep.json", &text);
    let out = dir.path().join("sweep");
    let o = phasemeas(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2", "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        let point = out.join(format!("point_{i:03}"));
        assert!(point.join("series.csv").exists());
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(point.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["seed"], i + 1);
        assert_eq!(m["status"], "completed");
    }
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(index["points"].as_array().unwrap().len(), 3);
}

#[test]
fn figdata_bundle_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let runs = dir.path().join("runs");
    let o = phasemeas(&["run", "--config", cfg.to_str().unwrap(), "--out", runs.join("small").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut bundles = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let f = phasemeas(&["figdata", "--runs", runs.to_str().unwrap(), "--out", out.to_str().unwrap(), "--panels", "2"]);
        assert_eq!(f.status.code(), Some(0), "{}", stderr(&f));
        bundles.push(out);
    }
    let panels = fs::read_to_string(bundles[0].join("fig1/small/panels.csv")).unwrap();
    assert_eq!(panels.lines().count(), 3);
    for file in ["manifest.json", "fig1/small/panels.csv", "fig1/small/series.csv", "fig2/grid.csv", "fig2/meta.json"] {
        assert_eq!(fs::read(bundles[0].join(file)).unwrap(), fs::read(bundles[1].join(file)).unwrap(), "{file}");
    }
}
