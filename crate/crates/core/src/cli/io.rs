//! CSV datasets, JSON documents, and the binary `Π̂` dump.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use super::CliError;
use crate::covariance::Dataset;
use crate::linalg::SymMatrix;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Reads `y,x1,...,xd`. Rows and columns in errors are 1-based, counting the header as row 1.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let parse_err = |row: usize, column: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.len() < 2 {
        return Err(parse_err(
            1,
            1,
            "need a response column and at least one covariate".into(),
        ));
    }
    let d = header.len() - 1;
    let mut y = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if record.len() != d + 1 {
            return Err(parse_err(
                row,
                record.len(),
                format!("expected {} fields, found {}", d + 1, record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, c + 1, format!("cannot parse '{field}' as a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, c + 1, format!("non-finite value '{field}'")));
            }
            if c == 0 {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, d, &values);
    Ok(Dataset::new(y, x)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.d()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..data.n() {
        let mut rec = vec![format_value(data.y()[i])];
        rec.extend(data.x().row(i).iter().map(|&v| format_value(v)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `header` then `rows` as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Writes JSON to `path`, or to stdout without one.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

/// `d` as little-endian `u64`, then the `d x d` entries row-major as little-endian `f64`.
pub fn write_matrix_dump(path: &Path, m: &SymMatrix) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&(m.dim() as u64).to_le_bytes()).map_err(io_err(path))?;
    for v in m.to_row_major() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_matrix_dump(path: &Path) -> Result<SymMatrix, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |message: &str| CliError::Parse {
        path: path.to_path_buf(),
        row: 0,
        column: 0,
        message: message.into(),
    };
    let (head, body) = bytes.split_at_checked(8).ok_or_else(|| bad("truncated header"))?;
    let d = u64::from_le_bytes(head.try_into().expect("8 bytes")) as usize;
    if body.len() != d * d * 8 {
        return Err(bad("size does not match header"));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(SymMatrix::from_row_slice(d, &vals)?)
}

/// `data.csv` → `data.truth.json`.
pub fn truth_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("truth.json")
}
