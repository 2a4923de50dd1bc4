//! Cartesian parameter sweeps: one run directory per point plus an index.
//!
//! ```text
//! <out>/sweep.json         hash of the sweep config, axes, per-point values and status
//! <out>/point_NNN/         an ordinary run directory; its config.json is the
//!                          fully expanded point config
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::{load_run, run_to_dir, Overrides, RunStatus, CONFIG_FILE};
use crate::error::{Error, Result};
use crate::scenario::{sha256_hex, ScenarioConfig};
use crate::verify::{verify_ensemble, verify_record, VerifyReport};

pub const SWEEP_INDEX: &str = "sweep.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub values: BTreeMap<String, Value>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
    pub axes: Vec<String>,
    pub points: Vec<SweepPoint>,
}

impl SweepIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SWEEP_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path,
            message: e.to_string(),
        })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SWEEP_INDEX);
        let text = serde_json::to_string_pretty(self).expect("index serialises") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn lookup(cfg: &ScenarioConfig, path: &str) -> Value {
    let v = serde_json::to_value(cfg).expect("config serialises");
    v.pointer(&format!("/{}", path.replace('.', "/"))).cloned().unwrap_or(Value::Null)
}

/// Runs every point of the sweep in `cfg` on `workers` threads. `progress`
/// is called as each point finishes. Returns the index and the first error
/// met, if any; failed points do not stop the others.
pub fn run_sweep(
    cfg: &ScenarioConfig,
    config_bytes: &[u8],
    out: &Path,
    overrides: Overrides,
    workers: usize,
    progress: &(dyn Fn(&str, &Result<()>) + Sync),
) -> Result<(SweepIndex, Option<Error>)> {
    let base = overrides.apply(cfg);
    let points = base.expand_sweep()?;
    // Fail on config errors before any work starts.
    for (label, p) in &points {
        p.build().map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key,
                message: format!("{message} (sweep point {label})"),
            },
            other => other,
        })?;
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let axes: Vec<String> = cfg.sweep.keys().cloned().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<Result<()>> = pool.install(|| {
        points
            .par_iter()
            .map(|(label, p)| {
                let bytes = serde_json::to_vec_pretty(p).expect("config serialises");
                let r = run_to_dir(p, &bytes, &out.join(label), Overrides::default()).map(|_| ());
                progress(label, &r);
                r
            })
            .collect()
    });
    let mut first_error = None;
    let mut index = SweepIndex {
        config_sha256: sha256_hex(config_bytes),
        overrides,
        axes: axes.clone(),
        points: Vec::with_capacity(points.len()),
    };
    for ((label, p), r) in points.iter().zip(results) {
        let values = axes.iter().map(|a| (a.clone(), lookup(p, a))).collect();
        let (status, error) = match r {
            Ok(()) => (RunStatus::Completed, None),
            Err(e) => {
                let msg = e.to_string();
                first_error.get_or_insert(e);
                (RunStatus::Failed, Some(msg))
            }
        };
        index.points.push(SweepPoint {
            label: label.clone(),
            values,
            status,
            error,
        });
    }
    index.write(out)?;
    Ok((index, first_error))
}

/// Checks every point of a finished sweep; when the seed is the only axis
/// the points are also checked as an ensemble.
pub fn verify_sweep(out: &Path, config_bytes: &[u8]) -> Result<VerifyReport> {
    let index = SweepIndex::read(out)?;
    let hash = sha256_hex(config_bytes);
    if index.config_sha256 != hash {
        return Err(Error::Manifest {
            path: out.join(SWEEP_INDEX),
            message: format!("config hash {hash} does not match sweep hash {}", index.config_sha256),
        });
    }
    let cfg = ScenarioConfig::from_json(config_bytes)?;
    let mut checks = Vec::new();
    let mut records = Vec::new();
    let mut scenario = None;
    for point in &index.points {
        let dir = out.join(&point.label);
        let path = dir.join(CONFIG_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (_, rec) = load_run(&dir, &bytes)?;
        let sc = ScenarioConfig::from_json(&bytes)?.build()?;
        for mut c in verify_record(&sc, &rec) {
            c.name = format!("{}/{}", point.label, c.name);
            checks.push(c);
        }
        records.push(rec);
        scenario.get_or_insert(sc);
    }
    if index.axes == ["evolution.seed"] {
        if let Some(sc) = &scenario {
            let refs: Vec<_> = records.iter().collect();
            checks.extend(verify_ensemble(sc, &refs));
        }
    }
    let report = VerifyReport {
        scenario: cfg.name,
        checks,
    };
    report.write(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"{
        "name": "s",
        "grid": { "q": [-6, 6], "p": [-6, 6], "nq": 24, "np": 24 },
        "channels": [ { "observable": "q", "beta": 1, "k": 0.5, "omega": 1, "mode": "discard" } ],
        "initial": { "kind": "gaussian", "mean": [0, 0], "cov": [[0.5, 0], [0, 0.5]] },
        "evolution": { "dt": 0.01, "t_end": 0.03, "seed": 3 },
        "sweep": { "channels.0.k": [0.25, 0.5], "evolution.seed": [1, 2, 3] }
    }"#;

    #[test]
    fn points_get_isolated_directories() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig::from_json(SWEEP.as_bytes()).unwrap();
        let (index, err) = run_sweep(&cfg, SWEEP.as_bytes(), dir.path(), Overrides::default(), 2, &|_, _| {}).unwrap();
        assert!(err.is_none());
        assert_eq!(index.points.len(), 6);
        assert_eq!(index.points[4].values["channels.0.k"], serde_json::json!(0.5));
        assert_eq!(index.points[4].values["evolution.seed"], serde_json::json!(2));
        let point: ScenarioConfig =
            serde_json::from_slice(&fs::read(dir.path().join("point_004").join(CONFIG_FILE)).unwrap()).unwrap();
        assert_eq!(point.channels[0].k, 0.5);
        assert!(point.sweep.is_empty());
        assert_eq!(SweepIndex::read(dir.path()).unwrap(), index);
        // Too few seeds for ensemble checks and too short for cadence, but
        // the per-point checks run.
        let report = verify_sweep(dir.path(), SWEEP.as_bytes()).unwrap();
        assert!(report.checks.iter().any(|c| c.name == "point_000/heat_kernel_p" && c.passed));
        assert!(verify_sweep(dir.path(), b"{}").is_err());
    }
}
