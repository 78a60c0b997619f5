//! On-disk formats.
//!
//! Dense matrices use a small binary container: the 8-byte magic `GMAT0001`
//! padded with zeros to 16 bytes, then `rows` and `cols` as little-endian
//! `u64`, then the entries row-major as little-endian `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GMAT0001";
const HEADER_LEN: usize = 16;

/// Serializes `m` into container bytes.
pub fn encode(m: ArrayView2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0u8; HEADER_LEN - 8]);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for row in m.rows() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN + 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing GMAT0001 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let rows = word(HEADER_LEN) as usize;
    let cols = word(HEADER_LEN + 8) as usize;
    let body = &bytes[HEADER_LEN + 16..];
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
    if expected != Some(body.len()) {
        return Err(Error::Format(format!(
            "{rows}x{cols} matrix needs {} payload bytes, found {}",
            rows.saturating_mul(cols).saturating_mul(8),
            body.len()
        )));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(m))?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Comma-separated rows, full round-trip precision, no header.
pub fn to_csv(m: ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(Error::Format(format!("line {}: {} fields, expected {c}", ln + 1, vals.len())))
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::Format(e.to_string()))
}

/// `row,col,value` for the upper triangle (diagonal included) of a symmetric
/// matrix, keeping entries with `|v| >= zero_tol` and `v != 0`.
pub fn sparse_triplets(m: ArrayView2<f64>, zero_tol: f64) -> String {
    let mut out = String::from("row,col,value\n");
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let v = m[[i, j]];
            if v != 0.0 && v.abs() >= zero_tol {
                let _ = writeln!(out, "{i},{j},{v:?}");
            }
        }
    }
    out
}

/// Ordered `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got '{line}'", ln + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_key_values(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
