//! Delimited-text input and output, min-max scaling and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{Points, SpatialDataset};
use crate::error::{GpError, Result};

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| GpError::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(GpError::from)
}

/// Builds a comma-delimited table in memory.
pub fn csv_bytes<S: AsRef<str>>(
    header: &[S],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|s| s.as_ref()))
        .map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| GpError::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> GpError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => GpError::Io(io),
            other => GpError::Data(format!("{other:?}")),
        }
    } else {
        GpError::Data(e.to_string())
    }
}

/// A dataset read from disk and the number of rows skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: SpatialDataset,
    pub dropped: usize,
}

fn parse_cell(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Reads the named feature and target columns. Rows with a missing or
/// non-numeric value in any of them are skipped.
pub fn load_csv(path: &Path, features: &[String], target: &str) -> Result<LoadedCsv> {
    if features.is_empty() {
        return Err(GpError::Config(
            "at least one feature column is required".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                GpError::Config(format!("column '{name}' not found in {}", path.display()))
            })
    };
    let feature_cols = features
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>>>()?;
    let target_col = column(target)?;

    let mut coords = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let cell = |c: usize| record.get(c).and_then(parse_cell);
        let row: Option<Vec<f64>> = feature_cols.iter().map(|&c| cell(c)).collect();
        match (row, cell(target_col)) {
            (Some(row), Some(y)) => {
                coords.extend(row);
                targets.push(y);
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with missing or non-numeric values",
            path.display()
        );
    }
    if targets.is_empty() {
        return Err(GpError::Data(format!(
            "{} has no usable rows",
            path.display()
        )));
    }
    let dataset = SpatialDataset::new(Points::new(features.len(), coords)?, targets)?
        .with_names(features.to_vec(), target.to_string());
    Ok(LoadedCsv { dataset, dropped })
}

fn column_names(data: &SpatialDataset) -> (Vec<String>, String) {
    let features = data
        .feature_names
        .clone()
        .unwrap_or_else(|| (0..data.dim()).map(|j| format!("x{j}")).collect());
    (
        features,
        data.target_name.clone().unwrap_or_else(|| "y".into()),
    )
}

/// Writes features then target, with a header row.
pub fn write_csv(path: &Path, data: &SpatialDataset) -> Result<()> {
    let (mut header, target) = column_names(data);
    header.push(target);
    let rows = data.coords.rows().zip(&data.targets).map(|(r, y)| {
        let mut row: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        row
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-column affine map of the training range onto `[0, 1]`. Values
/// outside the training range map outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct MinMaxScaler {
    pub columns: Vec<ColumnRange>,
}

impl MinMaxScaler {
    pub fn fit(data: &SpatialDataset) -> Result<Self> {
        let (names, _) = column_names(data);
        let columns = (0..data.dim())
            .map(|j| {
                let (min, max) = data
                    .coords
                    .rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                if !(max > min) {
                    return Err(GpError::Data(format!(
                        "feature column '{}' is constant",
                        names[j]
                    )));
                }
                Ok(ColumnRange {
                    name: names[j].clone(),
                    min,
                    max,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MinMaxScaler { columns })
    }

    pub fn transform_points(&self, points: &Points) -> Result<Points> {
        if points.dim() != self.columns.len() {
            return Err(GpError::invalid(format!(
                "scaler has {} columns but points have {}",
                self.columns.len(),
                points.dim()
            )));
        }
        let data = points
            .rows()
            .flat_map(|r| {
                r.iter()
                    .zip(&self.columns)
                    .map(|(v, c)| (v - c.min) / (c.max - c.min))
            })
            .collect();
        Points::new(points.dim(), data)
    }

    pub fn transform(&self, data: &SpatialDataset) -> Result<SpatialDataset> {
        Ok(SpatialDataset {
            coords: self.transform_points(&data.coords)?,
            ..data.clone()
        })
    }
}

/// Scales every feature column of `data` onto `[0, 1]`; targets are untouched.
pub fn minmax_scale(data: &SpatialDataset) -> Result<(SpatialDataset, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(data)?;
    Ok((scaler.transform(data)?, scaler))
}
