//! Demonstration ingestion: CSV loading, validation and time alignment.
//!
//! Each demonstration is a single-axis position trajectory. A corpus is the
//! set of demonstrations of one axis resampled onto a shared uniform grid
//! that spans the common time overlap of all of them.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub axis_label: String,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
}

impl Demonstration {
    /// Builds a validated demonstration: at least two samples, finite values,
    /// strictly increasing timestamps.
    pub fn new(axis_label: impl Into<String>, t: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let axis_label = axis_label.into();
        let bad = |reason: String| Error::InvalidDemonstration {
            label: axis_label.clone(),
            reason,
        };
        if t.len() != p.len() {
            return Err(bad(format!("{} timestamps but {} positions", t.len(), p.len())));
        }
        if t.len() < 2 {
            return Err(bad(format!("needs at least 2 samples, got {}", t.len())));
        }
        if let Some(i) = t.iter().chain(p.iter()).position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value at index {}", i % t.len())));
        }
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(bad(format!(
                "non-monotone time at sample {}: {} after {}",
                i + 1,
                t[i + 1],
                t[i]
            )));
        }
        Ok(Self { axis_label, t, p })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Linear interpolation at `tq`, which must lie inside `[start, end]`.
    pub fn interpolate(&self, tq: f64) -> f64 {
        let t = &self.t;
        let idx = t.partition_point(|&x| x <= tq);
        if idx == 0 {
            return self.p[0];
        }
        let i = idx - 1;
        if t[i] == tq || i + 1 == t.len() {
            return self.p[i];
        }
        let w = (tq - t[i]) / (t[i + 1] - t[i]);
        self.p[i] + (self.p[i + 1] - self.p[i]) * w
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    t: f64,
    p: f64,
}

/// Reads one demonstration from a `t,p` CSV file.
pub fn load_demonstration(path: &Path, axis: &str) -> Result<Demonstration> {
    let file = std::fs::File::open(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    read_demonstration(file, path, axis)
}

/// Parses `t,p` CSV content; `path` is only used in error messages.
pub fn read_demonstration(source: impl std::io::Read, path: &Path, axis: &str) -> Result<Demonstration> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "p" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `t,p`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut t = Vec::new();
    let mut p = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|pos| pos.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        t.push(row.t);
        p.push(row.p);
    }
    Demonstration::new(axis, t, p).map_err(|e| match e {
        Error::InvalidDemonstration { reason, .. } => Error::InvalidDemonstration {
            label: format!("{axis} ({})", path.display()),
            reason,
        },
        other => other,
    })
}

/// Loads one demonstration per file, all tagged with the same axis label.
pub fn load_demonstrations<P: AsRef<Path>>(paths: &[P], axis: &str) -> Result<Vec<Demonstration>> {
    paths
        .iter()
        .map(|p| load_demonstration(p.as_ref(), axis))
        .collect()
}

/// Demonstrations of one axis resampled onto a common uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCorpus {
    pub axis_label: String,
    pub grid: Vec<f64>,
    /// One row per demonstration, one column per grid point.
    pub matrix: DMatrix<f64>,
    pub sample_period: f64,
}

impl DemoCorpus {
    pub fn n_demos(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    /// The aligned rows as demonstrations on the grid.
    pub fn to_demonstrations(&self) -> Vec<Demonstration> {
        self.matrix
            .row_iter()
            .map(|row| Demonstration {
                axis_label: self.axis_label.clone(),
                t: self.grid.clone(),
                p: row.iter().copied().collect(),
            })
            .collect()
    }

    /// Cross-demo unbiased sample variance at every grid point.
    pub fn sample_variance(&self) -> Vec<f64> {
        let m = self.n_demos() as f64;
        self.matrix
            .column_iter()
            .map(|c| {
                let mean = c.mean();
                c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
            })
            .collect()
    }
}

/// Aligns demonstrations onto the uniform grid covering their common overlap.
pub fn align(demos: &[Demonstration], sample_period: f64) -> Result<DemoCorpus> {
    if demos.len() < 2 {
        return Err(Error::Alignment(format!(
            "a corpus needs at least 2 demonstrations, got {}",
            demos.len()
        )));
    }
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return Err(Error::Alignment(format!("invalid sample period {sample_period}")));
    }
    let axis = &demos[0].axis_label;
    if let Some(d) = demos.iter().find(|d| &d.axis_label != axis) {
        return Err(Error::Alignment(format!(
            "mixed axes `{axis}` and `{}`",
            d.axis_label
        )));
    }
    let start = demos.iter().map(Demonstration::start).fold(f64::NEG_INFINITY, f64::max);
    let end = demos.iter().map(Demonstration::end).fold(f64::INFINITY, f64::min);
    if end <= start {
        return Err(Error::Alignment(format!(
            "empty time overlap: latest start {start} >= earliest end {end}"
        )));
    }
    let steps = ((end - start) / sample_period + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| start + i as f64 * sample_period).collect();
    if grid.len() < 2 {
        return Err(Error::Alignment(format!(
            "overlap [{start}, {end}] shorter than one sample period"
        )));
    }
    let matrix = DMatrix::from_fn(demos.len(), grid.len(), |r, c| demos[r].interpolate(grid[c]));
    Ok(DemoCorpus {
        axis_label: axis.clone(),
        grid,
        matrix,
        sample_period,
    })
}
