//! Sampling grids, boundary-point identification, midpoint quadrature, and
//! CSV ingestion/export.

use indexmap::IndexMap;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("grid range is degenerate (need at least 2 points and lo < hi)")]
    DegenerateRange,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("row at line {line} has {got} fields, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    ParseFloat {
        line: usize,
        column: String,
        value: String,
    },
    #[error("columns have unequal lengths")]
    UnequalLengths,
}

/// Columnar batch of sample values plus named id subsets (boundary points,
/// data points, initial-condition rows, ...).
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    columns: IndexMap<String, Vec<f64>>,
    id_sets: BTreeMap<String, Vec<usize>>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.columns.first().map(|(_, c)| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_column(&mut self, name: &str, values: impl Into<Vec<f64>>) {
        self.columns.insert(name.to_string(), values.into());
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(|c| c.as_slice())
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn column_owned(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name).map(|c| c.to_vec())
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn add_id_set(&mut self, label: &str, ids: Vec<usize>) {
        self.id_sets.insert(label.to_string(), ids);
    }

    pub fn ids(&self, label: &str) -> Option<&[usize]> {
        self.id_sets.get(label).map(|v| v.as_slice())
    }

    /// Append the rows of `other` (matching columns required); id sets of
    /// `other` are shifted to the appended row positions.
    pub fn append(&mut self, other: &SampleSet) -> Result<()> {
        let offset = self.len();
        for (name, col) in &mut self.columns {
            let extra = other
                .columns
                .get(name)
                .ok_or_else(|| DataError::UnknownColumn(name.clone()))?;
            col.extend_from_slice(extra);
        }
        for (label, ids) in &other.id_sets {
            let shifted: Vec<usize> = ids.iter().map(|i| i + offset).collect();
            self.id_sets
                .entry(label.clone())
                .or_default()
                .extend(shifted);
        }
        Ok(())
    }

    fn check_rectangular(&self) -> Result<()> {
        let n = self.len();
        if self.columns.values().any(|c| c.len() != n) {
            return Err(DataError::UnequalLengths);
        }
        Ok(())
    }
}

/// Tensor-product grid over two named coordinates, row-major with the second
/// coordinate outermost: index = iy * nx + ix.
pub fn uniform_grid_named(
    x: (&str, f64, f64, usize),
    y: (&str, f64, f64, usize),
) -> Result<SampleSet> {
    let (x_name, x_lo, x_hi, nx) = x;
    let (y_name, y_lo, y_hi, ny) = y;
    if nx < 2 || ny < 2 || !(x_hi > x_lo) || !(y_hi > y_lo) {
        return Err(DataError::DegenerateRange);
    }
    let hx = (x_hi - x_lo) / (nx - 1) as f64;
    let hy = (y_hi - y_lo) / (ny - 1) as f64;
    let n = nx * ny;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for iy in 0..ny {
        let yv = y_lo + iy as f64 * hy;
        for ix in 0..nx {
            xs.push(x_lo + ix as f64 * hx);
            ys.push(yv);
        }
    }
    let mut set = SampleSet::new();
    set.add_column(x_name, xs);
    set.add_column(y_name, ys);
    Ok(set)
}

/// Uniform grid with the conventional column names `x` and `y`.
pub fn uniform_grid(
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<SampleSet> {
    uniform_grid_named(
        ("x", x_range.0, x_range.1, nx),
        ("y", y_range.0, y_range.1, ny),
    )
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EdgeSide {
    Min,
    Max,
    Both,
}

/// Per-edge tolerance spec for [`boundary_ids`]: points within `tol` of the
/// column's minimum and/or maximum count as boundary.
#[derive(Clone, Debug)]
pub struct EdgeSelect {
    pub column: String,
    pub side: EdgeSide,
    /// Absolute tolerance; defaults to 1e-9 of the column's range.
    pub tol: Option<f64>,
}

impl EdgeSelect {
    pub fn both(column: &str) -> Self {
        EdgeSelect {
            column: column.to_string(),
            side: EdgeSide::Both,
            tol: None,
        }
    }

    pub fn min(column: &str) -> Self {
        EdgeSelect {
            column: column.to_string(),
            side: EdgeSide::Min,
            tol: None,
        }
    }

    pub fn max(column: &str) -> Self {
        EdgeSelect {
            column: column.to_string(),
            side: EdgeSide::Max,
            tol: None,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }
}

/// Indices of samples lying on the selected edges (sorted, deduplicated).
/// An empty result is not an error.
pub fn boundary_ids(set: &SampleSet, selects: &[EdgeSelect]) -> Result<Vec<usize>> {
    let mut hit = vec![false; set.len()];
    for sel in selects {
        let col = set.column(&sel.column)?;
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = sel.tol.unwrap_or(1e-9 * (hi - lo).abs().max(1e-300));
        for (i, &v) in col.iter().enumerate() {
            let on_min = (v - lo).abs() <= tol;
            let on_max = (v - hi).abs() <= tol;
            let on = match sel.side {
                EdgeSide::Min => on_min,
                EdgeSide::Max => on_max,
                EdgeSide::Both => on_min || on_max,
            };
            if on {
                hit[i] = true;
            }
        }
    }
    Ok(hit
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.then_some(i))
        .collect())
}

/// Midpoint-rule quadrature points with per-cell measures, plus a separate
/// set of edge samples appended after the interior points (the edge samples
/// carry zero quadrature weight and are listed in `boundary_ids`).
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub set: SampleSet,
    pub interior_count: usize,
    pub boundary_ids: Vec<usize>,
}

/// Cell-centered n x n quadrature over a rectangle. Every interior point
/// carries weight `area / n^2` in the `vol` column; 4n boundary points
/// (n per edge, at cell-center offsets) follow with zero weight.
pub fn quadrature_grid(
    x_range: (f64, f64),
    y_range: (f64, f64),
    n: usize,
) -> Result<QuadratureGrid> {
    let (x_lo, x_hi) = x_range;
    let (y_lo, y_hi) = y_range;
    if n < 2 || !(x_hi > x_lo) || !(y_hi > y_lo) {
        return Err(DataError::DegenerateRange);
    }
    let hx = (x_hi - x_lo) / n as f64;
    let hy = (y_hi - y_lo) / n as f64;
    // Cell measure written as area / count so the weights sum to the exact
    // domain area.
    let w = ((x_hi - x_lo) * (y_hi - y_lo)) / (n * n) as f64;
    let total = n * n + 4 * n;
    let mut xs = Vec::with_capacity(total);
    let mut ys = Vec::with_capacity(total);
    let mut vol = Vec::with_capacity(total);
    for iy in 0..n {
        let yv = y_lo + (iy as f64 + 0.5) * hy;
        for ix in 0..n {
            xs.push(x_lo + (ix as f64 + 0.5) * hx);
            ys.push(yv);
            vol.push(w);
        }
    }
    let interior_count = xs.len();
    for i in 0..n {
        let xc = x_lo + (i as f64 + 0.5) * hx;
        let yc = y_lo + (i as f64 + 0.5) * hy;
        // bottom, top, left, right edges
        xs.extend_from_slice(&[xc, xc, x_lo, x_hi]);
        ys.extend_from_slice(&[y_lo, y_hi, yc, yc]);
        vol.extend_from_slice(&[0.0; 4]);
    }
    let boundary_ids: Vec<usize> = (interior_count..xs.len()).collect();
    let mut set = SampleSet::new();
    set.add_column("x", xs);
    set.add_column("y", ys);
    set.add_column("vol", vol);
    set.add_id_set("boundary", boundary_ids.clone());
    Ok(QuadratureGrid {
        set,
        interior_count,
        boundary_ids,
    })
}

/// Read the named columns from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, columns: &[&str]) -> Result<SampleSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(csv_io)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_io)?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut positions = Vec::with_capacity(columns.len());
    for want in columns {
        let pos = header
            .iter()
            .position(|h| h == want)
            .ok_or_else(|| DataError::MissingColumn(want.to_string()))?;
        positions.push(pos);
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_io)?;
        let line = row_idx + 2; // header is line 1
        if record.len() != header.len() {
            return Err(DataError::RaggedRows {
                line,
                expected: header.len(),
                got: record.len(),
            });
        }
        for (slot, &pos) in positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            let value = raw
                .trim()
                .parse::<f64>()
                .map_err(|_| DataError::ParseFloat {
                    line,
                    column: columns[slot].to_string(),
                    value: raw.to_string(),
                })?;
            cols[slot].push(value);
        }
    }
    let mut set = SampleSet::new();
    for (name, col) in columns.iter().zip(cols) {
        set.add_column(name, col);
    }
    Ok(set)
}

fn csv_io(e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Write all columns of a sample set as CSV. Floats use Rust's shortest
/// round-trip formatting, so reading the file back is value-exact.
pub fn save_csv(path: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    set.check_rectangular()?;
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let names: Vec<&str> = set.column_names().collect();
    writer.write_record(&names).map_err(csv_io)?;
    let n = set.len();
    let cols: Vec<&[f64]> = names.iter().map(|n| set.column(n).unwrap()).collect();
    let mut record = Vec::with_capacity(cols.len());
    for i in 0..n {
        record.clear();
        for col in &cols {
            record.push(format!("{}", col[i]));
        }
        writer.write_record(&record).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
