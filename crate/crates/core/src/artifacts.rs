//! On-disk layout of a run.
//!
//! ```text
//! <out>/config.json        byte copy of the input config
//! <out>/manifest.json      hash, seed, RNG, build, timestamps, status
//! <out>/series.csv         one row per recorded step
//! <out>/snapshots/snap_NNNNN.{bin,json}
//! ```
//!
//! Series columns, in order: `t, S`, then for each channel `j`:
//! `a_star_j, dW_j, kappa1_j, kappa2_j, kappa3_j, kappa4_j`, then
//! `mass_drift, q_mean, q_var, p_mean, p_var`. Values are written in
//! shortest round-trip form; missing values are `NaN`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apparatus::RNG_ALGORITHM;
use crate::error::{Error, Result};
use crate::master::{run_trajectory, ChannelSeries, TrajectoryRecord};
use crate::phase_space::snapshot::{read_snapshot, write_snapshot};
use crate::phase_space::DensityField;
use crate::scenario::{sha256_hex, ScenarioConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SERIES_FILE: &str = "series.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const BUILD_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const TAIL_COLUMNS: [&str; 5] = ["mass_drift", "q_mean", "q_var", "p_mean", "p_var"];

/// Header of the series file for `channels` channels.
pub fn series_columns(channels: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "S".to_string()];
    for j in 0..channels {
        cols.push(format!("a_star_{j}"));
        cols.push(format!("dW_{j}"));
        for n in 1..=4 {
            cols.push(format!("kappa{n}_{j}"));
        }
    }
    cols.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    cols
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Artifact {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_series(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(series_columns(rec.channels.len())).map_err(|e| csv_error(path, e))?;
    let mut row = Vec::new();
    for i in 0..rec.len() {
        row.clear();
        row.push(rec.times[i]);
        row.push(rec.entropy[i]);
        for c in &rec.channels {
            row.push(c.a_star[i]);
            row.push(c.dw[i]);
            row.extend(c.kappa.iter().map(|k| k[i]));
        }
        row.extend([rec.mass_drift[i], rec.q_mean[i], rec.q_var[i], rec.p_mean[i], rec.p_var[i]]);
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a series file back; snapshots are left empty.
pub fn read_series(path: &Path) -> Result<TrajectoryRecord> {
    let bad = |message: String| Error::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let channels = header.iter().filter(|h| h.starts_with("a_star_")).count();
    if header != series_columns(channels) {
        return Err(bad(format!("unexpected columns {header:?}")));
    }
    let mut rec = TrajectoryRecord {
        channels: vec![ChannelSeries::default(); channels],
        ..Default::default()
    };
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        if vals.len() != header.len() {
            return Err(bad(format!("row {} has {} fields", line + 1, vals.len())));
        }
        let mut it = vals.into_iter();
        let mut next = || it.next().expect("length checked");
        rec.times.push(next());
        rec.entropy.push(next());
        for c in rec.channels.iter_mut() {
            c.a_star.push(next());
            c.dw.push(next());
            for k in c.kappa.iter_mut() {
                k.push(next());
            }
        }
        rec.mass_drift.push(next());
        rec.q_mean.push(next());
        rec.q_var.push(next());
        rec.p_mean.push(next());
        rec.p_var.push(next());
    }
    Ok(rec)
}

/// Writes `snapshots/snap_NNNNN.{bin,json}` in time order.
pub fn write_snapshots(dir: &Path, snapshots: &[(f64, DensityField)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (t, rho)) in snapshots.iter().enumerate() {
        write_snapshot(dir, &format!("snap_{i:05}"), "rho", *t, rho.field())?;
    }
    Ok(())
}

/// Sidecar paths of every snapshot in `dir`, in file-name order.
pub fn snapshot_sidecars(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("snap_") && name.ends_with(".json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_snapshots(dir: &Path) -> Result<Vec<(f64, DensityField)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    snapshot_sidecars(dir)?
        .iter()
        .map(|p| {
            let (h, field) = read_snapshot(p)?;
            let bad = |message: String| Error::Artifact {
                path: p.clone(),
                message,
            };
            field.check_finite("density").map_err(|e| bad(e.to_string()))?;
            if field.values().iter().any(|&v| v < 0.0) {
                return Err(bad("negative density".into()));
            }
            // Stored densities are already normalised; keep their bits.
            Ok((h.time, DensityField::from_raw(*field.grid(), field.into_values())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub build_version: String,
    pub started_at: String,
    pub completed_at: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Command-line values that replaced those in the config file.
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
}

/// Settings that may be replaced from the command line without editing
/// the config (whose hash the manifest records).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.seed.is_none() && self.snapshot_every.is_none()
    }

    pub fn apply(&self, cfg: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = cfg.clone();
        if let Some(seed) = self.seed {
            cfg.evolution.seed = seed;
        }
        if let Some(every) = self.snapshot_every {
            cfg.output.snapshot_every = Some(every);
        }
        cfg
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path,
            message: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Refuses a run whose config hash differs from `config_bytes` or that
    /// did not complete.
    pub fn check(&self, dir: &Path, config_bytes: &[u8]) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let hash = sha256_hex(config_bytes);
        if self.config_sha256 != hash {
            return Err(Error::Manifest {
                path,
                message: format!("config hash {hash} does not match manifest hash {}", self.config_sha256),
            });
        }
        if self.status != RunStatus::Completed {
            return Err(Error::Manifest {
                path,
                message: format!("run status is {:?}, not completed", self.status),
            });
        }
        Ok(())
    }
}

fn write_record(dir: &Path, rec: &TrajectoryRecord) -> Result<()> {
    write_series(&dir.join(SERIES_FILE), rec)?;
    let snap_dir = dir.join(SNAPSHOT_DIR);
    if snap_dir.exists() {
        fs::remove_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
    }
    write_snapshots(&snap_dir, &rec.snapshots)
}

/// Runs the config in `config_bytes` (parsed as `cfg`) with `overrides`
/// applied and writes its artifacts under `out`. A failed run still leaves a
/// manifest with status `failed` (and whatever rows were recorded), and the
/// error is returned.
pub fn run_to_dir(cfg: &ScenarioConfig, config_bytes: &[u8], out: &Path, overrides: Overrides) -> Result<Manifest> {
    let cfg = overrides.apply(cfg);
    let scenario = cfg.build()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, config_bytes).map_err(|e| Error::io(&config_path, e))?;
    let mut manifest = Manifest {
        config_sha256: sha256_hex(config_bytes),
        seed: cfg.evolution.seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        build_version: BUILD_VERSION.to_string(),
        started_at: now(),
        completed_at: None,
        status: RunStatus::Running,
        error: None,
        overrides,
    };
    manifest.write(out)?;

    let failure = match run_trajectory(&scenario) {
        Ok(mut rec) => {
            write_record(out, &rec)?;
            rec.failure.take()
        }
        Err(e) => Some(e),
    };
    manifest.completed_at = Some(now());
    match failure {
        None => {
            manifest.status = RunStatus::Completed;
            manifest.write(out)?;
            Ok(manifest)
        }
        Some(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.write(out)?;
            Err(e)
        }
    }
}

/// Loads a completed run, refusing it when its manifest does not match
/// `config_bytes`.
pub fn load_run(dir: &Path, config_bytes: &[u8]) -> Result<(Manifest, TrajectoryRecord)> {
    let manifest = Manifest::read(dir)?;
    manifest.check(dir, config_bytes)?;
    let mut rec = read_series(&dir.join(SERIES_FILE))?;
    rec.snapshots = read_snapshots(&dir.join(SNAPSHOT_DIR))?;
    rec.complete = true;
    Ok((manifest, rec))
}
