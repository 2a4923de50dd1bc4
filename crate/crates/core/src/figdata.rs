//! Plot-ready bundles built from stored runs.
//!
//! ```text
//! <out>/fig1/<run>/series.csv      copy of the run's series
//! <out>/fig1/<run>/panels.csv      panel, snapshot, t, periods
//! <out>/fig1/<run>/snap_NNNNN.*    the selected snapshots
//! <out>/fig1/<run>/meta.json       name, description, omega, config hash
//! <out>/fig2/grid.csv              temperature_k, frequency_hz, obstruction_js, regime
//! <out>/fig2/meta.json             constants, ranges, reference point
//! <out>/manifest.json              sources and build
//! ```
//!
//! Nothing in a bundle depends on the time it was written, so rebuilding
//! from the same runs gives identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{classical_obstruction, classical_quantum_boundary, Regime, BOLTZMANN, HBAR};
use crate::artifacts::{snapshot_sidecars, Manifest, BUILD_VERSION, CONFIG_FILE, SERIES_FILE, SNAPSHOT_DIR};
use crate::error::{Error, Result};
use crate::phase_space::snapshot::read_snapshot;
use crate::scenario::ScenarioConfig;

/// Chart settings for the regime grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeChart {
    pub temperature_k: (f64, f64),
    pub frequency_hz: (f64, f64),
    pub n_temperature: usize,
    pub n_frequency: usize,
}

impl Default for RegimeChart {
    fn default() -> Self {
        RegimeChart {
            temperature_k: crate::analysis::DEFAULT_TEMPERATURE_RANGE,
            frequency_hz: crate::analysis::DEFAULT_FREQUENCY_RANGE,
            n_temperature: 141,
            n_frequency: 171,
        }
    }
}

#[derive(Debug, Serialize)]
struct ReferencePoint {
    temperature_k: f64,
    frequency_hz: f64,
    obstruction_js: f64,
    ratio_to_hbar_half: f64,
}

#[derive(Debug, Serialize)]
struct RegimeMeta {
    boltzmann_j_per_k: f64,
    hbar_js: f64,
    hbar_half_js: f64,
    chart: RegimeChart,
    max_obstruction_js: f64,
    reference: ReferencePoint,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `fig2/grid.csv` and `fig2/meta.json` under `out`.
pub fn write_regime_chart(out: &Path, chart: &RegimeChart) -> Result<()> {
    let grid = classical_quantum_boundary(chart.temperature_k, chart.frequency_hz, chart.n_temperature, chart.n_frequency)?;
    let dir = out.join("fig2");
    create_dir(&dir)?;
    let mut csv = String::from("temperature_k,frequency_hz,obstruction_js,regime\n");
    for (i, t) in grid.temperatures_k.iter().enumerate() {
        for (j, f) in grid.frequencies_hz.iter().enumerate() {
            let label = match grid.regime[i][j] {
                Regime::Classical => "classical",
                Regime::Quantum => "quantum",
            };
            csv.push_str(&format!("{t:e},{f:e},{:e},{label}\n", grid.obstruction[i][j]));
        }
    }
    write_text(&dir.join("grid.csv"), &csv)?;
    let (t_ref, f_ref) = (300.0, 12e12);
    let o = classical_obstruction(t_ref, f_ref);
    let meta = RegimeMeta {
        boltzmann_j_per_k: BOLTZMANN,
        hbar_js: HBAR,
        hbar_half_js: grid.hbar_half,
        chart: *chart,
        max_obstruction_js: grid.max_obstruction(),
        reference: ReferencePoint {
            temperature_k: t_ref,
            frequency_hz: f_ref,
            obstruction_js: o,
            ratio_to_hbar_half: o / grid.hbar_half,
        },
    };
    write_text(&dir.join("meta.json"), &(serde_json::to_string_pretty(&meta).expect("meta serialises") + "\n"))
}

#[derive(Debug, Serialize)]
struct RunMeta {
    name: String,
    description: String,
    system_omega: f64,
    config_sha256: String,
    snapshots_available: usize,
}

#[derive(Debug, Serialize)]
pub struct SourceEntry {
    pub directory: String,
    pub name: String,
    pub config_sha256: String,
}

/// Evenly spread indices into `n` items, always including the first and
/// last.
fn panel_indices(n: usize, panels: usize) -> Vec<usize> {
    if n == 0 || panels == 0 {
        return Vec::new();
    }
    if panels >= n {
        return (0..n).collect();
    }
    if panels == 1 {
        return vec![0];
    }
    let mut idx: Vec<usize> = (0..panels)
        .map(|i| ((i * (n - 1)) as f64 / (panels - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

/// Copies one completed run into `out/fig1/<dir name>/` with `panels`
/// snapshots selected.
pub fn write_run_panels(run: &Path, out: &Path, panels: usize) -> Result<SourceEntry> {
    let config_path = run.join(CONFIG_FILE);
    let bytes = fs::read(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let manifest = Manifest::read(run)?;
    manifest.check(run, &bytes)?;
    let cfg = ScenarioConfig::from_json(&bytes)?;
    let dir_name = run
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Artifact {
            path: run.to_path_buf(),
            message: "run directory has no usable name".into(),
        })?
        .to_string();
    let dest = out.join("fig1").join(&dir_name);
    create_dir(&dest)?;
    copy(&run.join(SERIES_FILE), &dest.join(SERIES_FILE))?;

    let sidecars = snapshot_sidecars(&run.join(SNAPSHOT_DIR))?;
    let mut csv = String::from("panel,snapshot,t,periods\n");
    for (panel, &i) in panel_indices(sidecars.len(), panels).iter().enumerate() {
        let sidecar = &sidecars[i];
        let (header, _) = read_snapshot(sidecar)?;
        let stem = sidecar.file_stem().and_then(|s| s.to_str()).expect("snapshot stem").to_string();
        copy(sidecar, &dest.join(format!("{stem}.json")))?;
        copy(&sidecar.with_file_name(&header.data_file), &dest.join(&header.data_file))?;
        let periods = header.time * cfg.system_omega / (2.0 * std::f64::consts::PI);
        csv.push_str(&format!("{panel},{stem}.json,{},{}\n", header.time, periods));
    }
    write_text(&dest.join("panels.csv"), &csv)?;
    let meta = RunMeta {
        name: cfg.name.clone(),
        description: cfg.description.clone(),
        system_omega: cfg.system_omega,
        config_sha256: manifest.config_sha256.clone(),
        snapshots_available: sidecars.len(),
    };
    write_text(&dest.join("meta.json"), &(serde_json::to_string_pretty(&meta).expect("meta serialises") + "\n"))?;
    Ok(SourceEntry {
        directory: dir_name,
        name: cfg.name,
        config_sha256: manifest.config_sha256,
    })
}

/// Run directories directly under `root` (those holding a manifest), sorted.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join(crate::artifacts::MANIFEST_FILE).exists() {
            runs.push(path);
        }
    }
    runs.sort();
    Ok(runs)
}

#[derive(Debug, Serialize)]
struct BundleManifest<'a> {
    build_version: &'a str,
    panels_per_run: usize,
    sources: &'a [SourceEntry],
}

/// Builds the whole bundle: every completed run found in `runs_root` plus
/// the regime chart.
pub fn write_bundle(runs_root: Option<&Path>, out: &Path, panels: usize, chart: &RegimeChart) -> Result<Vec<SourceEntry>> {
    create_dir(out)?;
    let mut sources = Vec::new();
    if let Some(root) = runs_root {
        for run in find_runs(root)? {
            sources.push(write_run_panels(&run, out, panels)?);
        }
    }
    write_regime_chart(out, chart)?;
    let manifest = BundleManifest {
        build_version: BUILD_VERSION,
        panels_per_run: panels,
        sources: &sources,
    };
    write_text(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n"),
    )?;
    Ok(sources)
}
