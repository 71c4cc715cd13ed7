//! Shared helpers for the on-disk CSV / JSON artifacts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// 17 significant digits: enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_string(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Numeric CSV table: header names and rows of parsed values.
#[derive(Clone, Debug)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.write_record(&row)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<NumericTable> {
    if !path.exists() {
        return Err(Error::format(path, "expected file is missing"));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("row {}: cannot parse {field:?}", line + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(NumericTable { header, rows })
}

/// Writes every entry of `values` as one row: its index under `index_names`, then `value`.
pub fn write_indexed(path: &Path, values: &Tensor, index_names: &[&str]) -> Result<()> {
    let shape = values.shape().to_vec();
    if index_names.len() != shape.len() {
        return Err(Error::invalid(format!(
            "{} index columns for a tensor of rank {}",
            index_names.len(),
            shape.len()
        )));
    }
    let mut header: Vec<String> = index_names.iter().map(|s| s.to_string()).collect();
    header.push("value".into());
    let rows = values.data().iter().enumerate().map(|(flat, &v)| {
        let mut row: Vec<String> = unravel(flat, &shape).iter().map(|i| i.to_string()).collect();
        row.push(fmt_f64(v));
        row
    });
    write_table(path, &header, rows)
}

pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (d, &dim) in shape.iter().enumerate().rev() {
        idx[d] = flat % dim;
        flat /= dim;
    }
    idx
}

/// Fills a tensor of `shape` from rows of `index_cols` indices followed by
/// values. Several value columns spread over the last axis.
pub fn table_to_tensor(
    table: &NumericTable,
    shape: &[usize],
    index_cols: usize,
    path: &Path,
) -> Result<Tensor> {
    let value_cols = table.header.len().saturating_sub(index_cols);
    let spread = value_cols > 1 || index_cols < shape.len();
    if value_cols == 0 || index_cols + usize::from(spread) != shape.len() {
        return Err(Error::format(
            path,
            format!("header {:?} does not describe shape {shape:?}", table.header),
        ));
    }
    let mut out = Tensor::zeros(shape);
    let mut seen = 0usize;
    for (line, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(Error::format(path, format!("row {} has {} fields", line + 2, row.len())));
        }
        let mut idx = Vec::with_capacity(shape.len());
        for &v in &row[..index_cols] {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::format(path, format!("row {}: bad index {v}", line + 2)));
            }
            idx.push(v as usize);
        }
        for (j, &v) in row[index_cols..].iter().enumerate() {
            let mut full = idx.clone();
            if spread {
                full.push(j);
            }
            if full.iter().zip(shape).any(|(i, d)| i >= d) {
                return Err(Error::format(
                    path,
                    format!("row {}: index {full:?} outside shape {shape:?}", line + 2),
                ));
            }
            let flat = out.flat_index(&full);
            out.data_mut()[flat] = v;
            seen += 1;
        }
    }
    if seen != out.numel() {
        return Err(Error::format(
            path,
            format!("holds {seen} values, shape {shape:?} needs {}", out.numel()),
        ));
    }
    Ok(out)
}
