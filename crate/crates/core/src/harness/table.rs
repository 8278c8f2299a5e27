//! Numeric CSV tables: floats as `{:.16e}`, `,` separators, LF line endings.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_csv<S: AsRef<str>>(header: &[S], rows: &[Vec<Cell>]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidConfig(format!("CSV encoding failed: {e}"));
    writer
        .write_record(header.iter().map(|h| h.as_ref()))
        .map_err(csv_err)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writer.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("CSV encoding failed: {e}")))
}

/// A CSV file with a header and numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn read(path: &Path) -> Result<Self> {
        let source = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: source.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse {
                path: source.clone(),
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Parse {
                path: source.clone(),
                line,
                message: e.to_string(),
            })?;
            let row = record
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: source.clone(),
                    line,
                    message: format!("non-numeric field: {e}"),
                })?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}
