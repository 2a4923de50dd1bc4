//! Declarative run descriptions: one JSON document per scenario.
//!
//! ```json
//! {
//!   "name": "heat_q",
//!   "grid": { "q": [-6, 6], "p": [-8, 8], "nq": 128, "np": 128 },
//!   "hamiltonian": "0",
//!   "channels": [
//!     { "observable": "q", "beta": 1, "k": 1, "omega": 1, "mode": "discard" }
//!   ],
//!   "initial": { "kind": "gaussian", "mean": [0, 0], "cov": [[1, 0], [0, 0.25]] },
//!   "evolution": { "dt": 0.01, "t_end": 4, "seed": 1 },
//!   "output": { "series_every": 1, "snapshot_every": 0.5 }
//! }
//! ```
//!
//! An optional `"sweep"` object maps dotted paths (`"channels.0.k"`) to
//! lists of values; `sweep` runs every point of their Cartesian product.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::apparatus::ApparatusConfig;
use crate::error::{Error, Result};
use crate::master::{ChannelMode, EvolutionConfig, MeasurementChannel};
use crate::observable::ObservableSpec;
use crate::phase_space::{BoundaryMode, DensityField, Grid2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub nq: usize,
    pub np: usize,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub observable: String,
    pub beta: f64,
    pub k: f64,
    pub omega: f64,
    #[serde(default)]
    pub mode: ChannelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Gaussian { mean: [f64; 2], cov: [[f64; 2]; 2] },
    Uniform,
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Write a series row every this many steps.
    #[serde(default = "one")]
    pub series_every: usize,
    /// Explicit snapshot times.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Snapshot interval, in addition to `snapshot_times`.
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    /// Default artifact directory when `--out` is not given.
    #[serde(default)]
    pub directory: Option<String>,
}

fn one() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            series_every: 1,
            snapshot_times: Vec::new(),
            snapshot_every: None,
            directory: None,
        }
    }
}

impl OutputSpec {
    /// Step indices (0 = initial state) at which snapshots are taken: the
    /// nearest step to each requested time within the run.
    pub fn snapshot_steps(&self, dt: f64, steps: usize) -> Vec<usize> {
        let mut times = self.snapshot_times.clone();
        if let Some(every) = self.snapshot_every.filter(|e| *e > 0.0) {
            let count = (steps as f64 * dt / every + 1e-9).floor() as usize;
            times.extend((0..=count).map(|i| i as f64 * every));
        }
        let mut idx: Vec<usize> = times
            .iter()
            .filter(|t| **t >= 0.0)
            .map(|t| (t / dt).round() as usize)
            .filter(|&n| n <= steps)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

fn unit() -> f64 {
    1.0
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub grid: GridSpec,
    #[serde(default = "zero")]
    pub hamiltonian: String,
    /// Natural frequency of the system, used only to express times in
    /// periods and diffusion times.
    #[serde(default = "unit")]
    pub system_omega: f64,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    pub initial: InitialSpec,
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<Value>>,
}

/// A scenario with every expression parsed and every field sampled.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub grid: Grid2D,
    pub hamiltonian: ObservableSpec,
    pub system_omega: f64,
    pub channels: Vec<MeasurementChannel>,
    pub initial: DensityField,
    pub evolution: EvolutionConfig,
    pub output: OutputSpec,
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ScenarioConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
        })
    }

    /// Reads a config file, returning it with the raw bytes it was parsed from.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_json(&bytes)?, bytes))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<Grid2D> {
        let g = &self.grid;
        Grid2D::new((g.q[0], g.q[1]), (g.p[0], g.p[1]), g.nq, g.np, g.boundary)
            .map_err(|e| Error::config("grid", e.to_string()))
    }

    /// Parses every expression and samples every field, naming the key at
    /// fault on failure.
    pub fn build(&self) -> Result<Scenario> {
        let grid = self.grid()?;
        self.evolution.validate()?;
        if let Some(e) = self.output.snapshot_every {
            if !(e > 0.0) {
                return Err(Error::config("output.snapshot_every", "must be positive"));
            }
        }
        if !(self.system_omega > 0.0 && self.system_omega.is_finite()) {
            return Err(Error::config("system_omega", "must be positive"));
        }
        let hamiltonian =
            ObservableSpec::parse(&self.hamiltonian, &grid, 0.0).map_err(|e| Error::config("hamiltonian", e.to_string()))?;
        let mut channels = Vec::with_capacity(self.channels.len());
        for (j, c) in self.channels.iter().enumerate() {
            let key = |field: &str| format!("channels[{j}].{field}");
            let observable =
                ObservableSpec::parse(&c.observable, &grid, 0.0).map_err(|e| Error::config(key("observable"), e.to_string()))?;
            let cfg = ApparatusConfig { beta: c.beta, omega: c.omega, k: c.k };
            for (name, ok) in [
                ("beta", c.beta > 0.0 && c.beta.is_finite()),
                ("omega", c.omega > 0.0 && c.omega.is_finite()),
                ("k", c.k >= 0.0 && c.k.is_finite()),
            ] {
                if !ok {
                    return Err(Error::config(key(name), "out of range"));
                }
            }
            if c.mode == ChannelMode::Read && c.k == 0.0 {
                return Err(Error::config(key("k"), "a read channel needs k > 0"));
            }
            channels.push(MeasurementChannel::new(observable, cfg, c.mode).map_err(|e| Error::config(key("observable"), e.to_string()))?);
        }
        let initial = self.initial_density(&grid)?;
        Ok(Scenario {
            name: self.name.clone(),
            grid,
            hamiltonian,
            system_omega: self.system_omega,
            channels,
            initial,
            evolution: self.evolution,
            output: self.output.clone(),
        })
    }

    fn initial_density(&self, grid: &Grid2D) -> Result<DensityField> {
        let bad = |key: &str, e: Error| Error::config(key, e.to_string());
        match &self.initial {
            InitialSpec::Uniform => Ok(DensityField::uniform(*grid)),
            InitialSpec::Gaussian { mean, cov } => {
                DensityField::gaussian_correlated(*grid, (mean[0], mean[1]), *cov).map_err(|e| bad("initial.cov", e))
            }
            InitialSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::config("initial.components", "empty mixture"));
                }
                let mut values = vec![0.0; grid.len()];
                for (i, c) in components.iter().enumerate() {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(Error::config(format!("initial.components[{i}].weight"), "must be positive"));
                    }
                    let part = DensityField::gaussian_correlated(*grid, (c.mean[0], c.mean[1]), c.cov)
                        .map_err(|e| bad(&format!("initial.components[{i}].cov"), e))?;
                    for (v, r) in values.iter_mut().zip(part.values()) {
                        *v += c.weight * r;
                    }
                }
                DensityField::new(*grid, values).map_err(|e| bad("initial", e))
            }
        }
    }

    /// Every point of the sweep as `(label, config)`; a config without a
    /// sweep yields itself once with an empty label.
    pub fn expand_sweep(&self) -> Result<Vec<(String, ScenarioConfig)>> {
        let mut base = self.clone();
        base.sweep.clear();
        if self.sweep.is_empty() {
            return Ok(vec![(String::new(), base)]);
        }
        let base_value = serde_json::to_value(&base).expect("config serialises");
        let axes: Vec<(&String, &Vec<Value>)> = self.sweep.iter().collect();
        for (path, values) in &axes {
            if values.is_empty() {
                return Err(Error::config(format!("sweep.{path}"), "no values"));
            }
        }
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let mut points = Vec::with_capacity(total);
        for n in 0..total {
            let mut value = base_value.clone();
            let mut rem = n;
            // Last axis varies fastest.
            let mut choice = vec![0; axes.len()];
            for (a, (_, vals)) in axes.iter().enumerate().rev() {
                choice[a] = rem % vals.len();
                rem /= vals.len();
            }
            for (a, (path, vals)) in axes.iter().enumerate() {
                set_path(&mut value, path, vals[choice[a]].clone())?;
            }
            let cfg: ScenarioConfig = serde_json::from_value(value)
                .map_err(|e| Error::config(format!("sweep point {n}"), e.to_string()))?;
            points.push((format!("point_{n:03}"), cfg));
        }
        Ok(points)
    }
}

fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let key = || format!("sweep.{path}");
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let next = match cur {
            Value::Object(map) => map.get_mut(*part),
            Value::Array(arr) => part.parse::<usize>().ok().and_then(move |k| arr.get_mut(k)),
            _ => None,
        };
        match next {
            Some(slot) if last => {
                *slot = new;
                return Ok(());
            }
            Some(slot) => cur = slot,
            None => return Err(Error::config(key(), format!("path component `{part}` does not exist"))),
        }
    }
    Err(Error::config(key(), "empty path"))
}
