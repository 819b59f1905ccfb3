//! CSV matrices and numeric argument lists.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a numeric CSV with a header row; rows are observations.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: data row {}: {e}", path.display(), r + 1)))?;
        if record.len() != cols {
            return Err(CliError::Data(format!(
                "{}: data row {} has {} fields, header has {cols}",
                path.display(),
                r + 1,
                record.len()
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("{}: data row {}, column {} ('{}'): cannot parse '{field}' as a number", path.display(), r + 1, c + 1, header[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("{}: data row {}, column {}: value is not finite", path.display(), r + 1, c + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &values)))
}

/// Writes `header` and then one line per row of string fields.
pub fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    writer.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> CliResult<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    write_rows(path, &header, m.row_iter().map(|r| r.iter().map(|v| fmt_num(*v)).collect()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `"1,2.5,-3"` → `[1, 2.5, -3]`.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = text.split(',').map(|t| t.trim().parse().ok()).collect();
    items.filter(|v| !v.is_empty())
}

/// `"a1,..,aq;b1,..,bq;..."` → one vector per `;`-separated group, each of length `q`.
pub fn parse_vectors(text: &str, q: usize) -> Option<Vec<Vec<f64>>> {
    let groups: Option<Vec<Vec<f64>>> = text.split(';').map(parse_list::<f64>).collect();
    groups.filter(|g| g.iter().all(|v| v.len() == q && v.iter().all(|x| x.is_finite())))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`rows_of`]; `None` for ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(DMatrix::from_row_slice(rows.len(), cols, &flat))
}
