//! Snapshot files: a raw little-endian `f64` array in row-major order
//! (`q` slow, `p` fast) plus a JSON sidecar describing it.
//!
//! `name.bin` holds `nq * np * 8` bytes; `name.json` holds a
//! [`SnapshotHeader`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::field::ScalarField;
use super::grid::Grid2D;

pub const SNAPSHOT_DTYPE: &str = "f64le";
pub const SNAPSHOT_ORDER: &str = "row-major (q, p)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub field: String,
    pub time: f64,
    pub shape: [usize; 2],
    pub grid: Grid2D,
    pub dtype: String,
    pub order: String,
    pub data_file: String,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

/// Writes `field` as `<dir>/<stem>.bin` plus `<dir>/<stem>.json`.
pub fn write_snapshot(dir: &Path, stem: &str, name: &str, time: f64, field: &ScalarField) -> Result<SnapshotHeader> {
    let (bin, json) = paths(dir, stem);
    let grid = *field.grid();
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = SnapshotHeader {
        field: name.to_string(),
        time,
        shape: [grid.nq, grid.np],
        grid,
        dtype: SNAPSHOT_DTYPE.to_string(),
        order: SNAPSHOT_ORDER.to_string(),
        data_file: format!("{stem}.bin"),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serialises");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(header)
}

/// Reads a snapshot back given the path of its JSON sidecar.
pub fn read_snapshot(sidecar: &Path) -> Result<(SnapshotHeader, ScalarField)> {
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let header: SnapshotHeader = serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: sidecar.to_path_buf(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Artifact {
        path: sidecar.to_path_buf(),
        message,
    };
    if header.dtype != SNAPSHOT_DTYPE {
        return Err(bad(format!("unsupported dtype `{}`", header.dtype)));
    }
    header.grid.validate().map_err(|e| bad(e.to_string()))?;
    if header.shape != [header.grid.nq, header.grid.np] {
        return Err(bad("shape disagrees with grid".into()));
    }
    let bin = sidecar.with_file_name(&header.data_file);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != header.grid.len() * 8 {
        return Err(bad(format!(
            "expected {} bytes of data, found {}",
            header.grid.len() * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = ScalarField::new(header.grid, values).map_err(|e| bad(e.to_string()))?;
    Ok((header, field))
}
