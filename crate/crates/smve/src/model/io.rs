//! Matrix file formats: dense CSV (rows, no header) and a binary
//! column-major float64 format with a 16-byte header
//! (magic `SMVE-MAT`, little-endian u32 M, u32 N).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"SMVE-MAT";

#[derive(Debug, Error)]
pub enum MatrixIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad binary header: {0}")]
    BadHeader(String),
    #[error("empty matrix file")]
    Empty,
}

/// Reads a dense CSV matrix: one row per line, comma-separated, no header.
pub fn read_csv(path: &Path) -> Result<DMatrix<f64>, MatrixIoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = trimmed
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        let row = row.map_err(|e| MatrixIoError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MatrixIoError::Parse {
                    line: i + 1,
                    msg: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MatrixIoError::Empty);
    }
    let m = rows.len();
    let n = rows[0].len();
    Ok(DMatrix::from_fn(m, n, |r, c| rows[r][c]))
}

pub fn write_csv(path: &Path, h: &DMatrix<f64>) -> Result<(), MatrixIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..h.nrows() {
        let row: Vec<String> = (0..h.ncols()).map(|c| format!("{:?}", h[(r, c)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads the binary format: 8-byte magic, u32 M, u32 N, then M*N
/// little-endian f64 values in column-major order.
pub fn read_binary(path: &Path) -> Result<DMatrix<f64>, MatrixIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MatrixIoError::BadHeader("wrong magic bytes".into()));
    }
    let mut dims = [0u8; 8];
    r.read_exact(&mut dims)?;
    let m = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
    if m == 0 || n == 0 {
        return Err(MatrixIoError::BadHeader(format!("degenerate dimensions {m}x{n}")));
    }
    let mut data = vec![0.0f64; m * n];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(DMatrix::from_vec(m, n, data))
}

pub fn write_binary(path: &Path, h: &DMatrix<f64>) -> Result<(), MatrixIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(h.nrows() as u32).to_le_bytes())?;
    w.write_all(&(h.ncols() as u32).to_le_bytes())?;
    // DMatrix stores column-major, matching the file layout
    for v in h.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Dispatches on extension: `.csv` text, anything else binary.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, MatrixIoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_binary(path),
    }
}
