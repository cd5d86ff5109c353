//! Snapshot CSV files and the JSON run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fpn_core::grid::Mesh;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A `rho` field at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub t: f64,
    /// Row-major, `values[j * nx + i]`.
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn new(mesh: &Mesh, t: f64, values: Vec<f64>) -> Self {
        Self {
            nx: mesh.nx,
            ny: mesh.ny,
            dx: mesh.dx,
            dy: mesh.dy,
            t,
            values,
        }
    }

    /// Header `nx,ny,dx,dy,t`, its values, then one line per mesh row.
    /// Reals carry 17 significant digits, so parsing restores them exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 24 + 128);
        s.push_str("nx,ny,dx,dy,t\n");
        let _ = writeln!(
            s,
            "{},{},{:.16e},{:.16e},{:.16e}",
            self.nx, self.ny, self.dx, self.dy, self.t
        );
        for row in self.values.chunks(self.nx) {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("nx,ny,dx,dy,t") {
            return Err("missing header".into());
        }
        let meta: Vec<&str> = lines.next().ok_or("missing mesh line")?.split(',').collect();
        if meta.len() != 5 {
            return Err("mesh line needs five fields".into());
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        let real = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let (nx, ny) = (int(meta[0])?, int(meta[1])?);
        let mut values = Vec::with_capacity(nx * ny);
        for line in lines {
            for field in line.split(',') {
                values.push(real(field)?);
            }
        }
        if values.len() != nx * ny {
            return Err(format!("expected {} values, found {}", nx * ny, values.len()));
        }
        Ok(Self {
            nx,
            ny,
            dx: real(meta[2])?,
            dy: real(meta[3])?,
            t: real(meta[4])?,
            values,
        })
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn snapshot_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("rho_{index:04}.csv"))
}

pub fn write_snapshot(dir: &Path, index: usize, snap: &Snapshot) -> CliResult<PathBuf> {
    let path = snapshot_path(dir, index);
    write_text(&path, &snap.to_csv())?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}
