//! CSV panels, standardization, and model (de)serialization.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvfError};
use crate::pipeline::FittedModel;
use crate::Matrix;

pub const SCHEMA_VERSION: &str = "svf-model/1";

/// A `T × N` panel: rows are time points, columns are series.
///
/// `means` and `stdevs` describe the affine map back to the original units:
/// `original = values * stdevs + means` column-wise. A freshly loaded panel
/// carries zeros and ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    #[serde(with = "rowmajor")]
    pub values: Matrix,
    pub series_names: Vec<String>,
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
}

impl PanelData {
    /// Wrap a matrix, validating shape and finiteness.
    pub fn new(values: Matrix, series_names: Option<Vec<String>>) -> Result<Self> {
        let (t, n) = values.shape();
        if t < 2 {
            return Err(SvfError::InsufficientData { needed: 2, got: t });
        }
        if n < 1 {
            return Err(SvfError::InsufficientData { needed: 1, got: 0 });
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SvfError::Parse {
                row: idx % t,
                col: idx / t,
                value: "non-finite".into(),
            });
        }
        let names = match series_names {
            Some(names) if names.len() == n => names,
            Some(names) => return Err(SvfError::DimensionMismatch { expected: n, got: names.len() }),
            None => (1..=n).map(|i| format!("x{i}")).collect(),
        };
        Ok(PanelData { values, series_names: names, means: vec![0.0; n], stdevs: vec![1.0; n] })
    }

    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    /// Column-wise `(x - mean) / sd` with the `1/(T-1)` variance divisor.
    pub fn standardize(&self) -> Result<PanelData> {
        let (t, n) = self.values.shape();
        let mut out = self.clone();
        for j in 0..n {
            let col: Vec<f64> = self.values.column(j).iter().copied().collect();
            let m = crate::numeric::mean(&col);
            let sd = crate::numeric::sample_sd(&col);
            if !(sd > 0.0) || sd < 1e-300 {
                return Err(SvfError::ZeroVariance(j));
            }
            for i in 0..t {
                out.values[(i, j)] = (self.values[(i, j)] - m) / sd;
            }
            out.means[j] = self.means[j] + self.stdevs[j] * m;
            out.stdevs[j] = self.stdevs[j] * sd;
        }
        Ok(out)
    }

    /// Map a standardized value of series `j` back to original units.
    pub fn unstandardize_value(&self, j: usize, x: f64) -> f64 {
        x * self.stdevs[j] + self.means[j]
    }

    /// Apply this panel's stored moments to new raw observations.
    pub fn standardize_with(&self, raw: &Matrix) -> Matrix {
        let mut out = raw.clone();
        for j in 0..raw.ncols() {
            for i in 0..raw.nrows() {
                out[(i, j)] = (raw[(i, j)] - self.means[j]) / self.stdevs[j];
            }
        }
        out
    }
}

/// Read a numeric CSV panel. Empty cells are missing and get filled by
/// linear interpolation in time; leading and trailing gaps take the nearest
/// observed value.
pub fn load_csv<P: AsRef<Path>>(path: P, has_header: bool) -> Result<PanelData> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, has_header)
}

/// Parse CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, has_header: bool) -> Result<PanelData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut width: Option<usize> = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if let Some(w) = width {
            if record.len() != w {
                return Err(SvfError::NonRectangular { row: r + 1, found: record.len(), expected: w });
            }
        } else {
            width = Some(record.len());
        }
        if r == 0 && has_header {
            names = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let data_row = rows.len() + 1;
        let parsed = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if cell.is_empty() {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(SvfError::Parse { row: data_row, col: c + 1, value: cell.to_string() }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(parsed);
    }

    let n = width.unwrap_or(0);
    let t = rows.len();
    if t < 2 {
        return Err(SvfError::InsufficientData { needed: 2, got: t });
    }
    let mut values = Matrix::zeros(t, n);
    for j in 0..n {
        let column: Vec<Option<f64>> = rows.iter().map(|row| row[j]).collect();
        let filled = interpolate_column(&column).ok_or(SvfError::EmptySeries(j + 1))?;
        for (i, v) in filled.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    PanelData::new(values, names)
}

/// Fill gaps linearly in the time index; `None` if nothing is observed.
pub fn interpolate_column(column: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    let first = *observed.first()?;
    let last = *observed.last()?;
    let mut out = vec![0.0; column.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if i <= first {
            column[first].unwrap()
        } else if i >= last {
            column[last].unwrap()
        } else if let Some(v) = column[i] {
            v
        } else {
            let hi = observed.partition_point(|&k| k < i);
            let (a, b) = (observed[hi - 1], observed[hi]);
            let (va, vb) = (column[a].unwrap(), column[b].unwrap());
            va + (vb - va) * (i - a) as f64 / (b - a) as f64
        };
    }
    Some(out)
}

/// Render a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a panel as CSV with a header row.
pub fn write_csv<P: AsRef<Path>>(panel: &PanelData, path: P) -> Result<()> {
    let mut out = String::new();
    out.push_str(&panel.series_names.join(","));
    out.push('\n');
    for i in 0..panel.t_len() {
        let row: Vec<String> = panel.values.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Write via a temporary sibling file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| SvfError::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(SvfError::from)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: String,
    #[serde(flatten)]
    model: serde_json::Value,
}

pub fn model_to_json(model: &FittedModel) -> Result<String> {
    let file = ModelFile { schema_version: SCHEMA_VERSION.to_string(), model: serde_json::to_value(model)? };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SvfError::CorruptModel(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| SvfError::CorruptModel("missing schema_version".into()))?;
    if found != SCHEMA_VERSION {
        return Err(SvfError::SchemaVersion { found: found.to_string(), expected: SCHEMA_VERSION.to_string() });
    }
    let model: FittedModel =
        serde_json::from_value(value).map_err(|e| SvfError::CorruptModel(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model<P: AsRef<Path>>(model: &FittedModel, path: P) -> Result<()> {
    write_atomic(path.as_ref(), model_to_json(model)?.as_bytes())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<FittedModel> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Serde adapter storing a matrix as an array of rows.
pub mod rowmajor {
    use super::Matrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Shape { nrows: m.nrows(), ncols: m.ncols(), rows }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let shape = Shape::deserialize(d)?;
        if shape.rows.len() != shape.nrows || shape.rows.iter().any(|r| r.len() != shape.ncols) {
            return Err(D::Error::custom("matrix rows do not match declared shape"));
        }
        Ok(Matrix::from_fn(shape.nrows, shape.ncols, |i, j| shape.rows[i][j]))
    }

    #[derive(Serialize, Deserialize)]
    struct Shape {
        nrows: usize,
        ncols: usize,
        rows: Vec<Vec<f64>>,
    }
}
