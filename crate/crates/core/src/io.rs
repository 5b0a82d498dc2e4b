//! Text formats.
//!
//! Vectors are written as lowercase hex (see [`BitVector::to_hex`]). A
//! vector file is a `dim:<n>` line followed by the hex string; a matrix file
//! is a `rows cols` line followed by one hex row per line; a key-set file is
//! a `u m allow_zero` line followed by `m` hex keys. Blank lines and lines
//! starting with `#` are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVector};
use crate::hashing::{KeySet, LoadHistogram};
use crate::potential::PotentialTrace;

/// Content lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(line: usize, field: Option<&str>, what: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    raw.parse()
        .map_err(|_| Error::parse(line, format!("bad {what}: {raw:?}")))
}

fn parse_bool(line: usize, raw: Option<&str>) -> Result<bool> {
    match raw {
        Some("true" | "1") => Ok(true),
        Some("false" | "0") => Ok(false),
        Some(other) => Err(Error::parse(
            line,
            format!("bad allow_zero flag: {other:?}"),
        )),
        None => Err(Error::parse(line, "missing allow_zero flag")),
    }
}

fn hex_line(line: usize, dim: usize, raw: &str) -> Result<BitVector> {
    BitVector::from_hex(dim, raw).map_err(|e| Error::parse(line, e.to_string()))
}

pub fn format_vector(v: &BitVector) -> String {
    format!("dim:{}\n{}\n", v.dim(), v.to_hex())
}

pub fn parse_vector(text: &str) -> Result<BitVector> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty vector file"))?;
    let dim = header
        .strip_prefix("dim:")
        .ok_or_else(|| Error::parse(n, "expected a dim:<n> header"))?;
    let dim: usize = parse_field(n, Some(dim.trim()), "dimension")?;
    let (n, body) = match lines.next() {
        Some(l) => l,
        None if dim == 0 => return Ok(BitVector::zeros(0)),
        None => return Err(Error::parse(n + 1, "missing hex body")),
    };
    let v = hex_line(n, dim, body)?;
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(n, "trailing content after vector"));
    }
    Ok(v)
}

pub fn format_matrix(m: &BitMatrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for row in m.row_data() {
        out.push_str(&row.to_hex());
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<BitMatrix> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty matrix file"))?;
    let mut fields = header.split_whitespace();
    let rows: usize = parse_field(n, fields.next(), "row count")?;
    let cols: usize = parse_field(n, fields.next(), "column count")?;
    if fields.next().is_some() {
        return Err(Error::parse(n, "header must be `rows cols`"));
    }
    let data = if cols == 0 {
        vec![BitVector::zeros(0); rows]
    } else {
        lines
            .by_ref()
            .take(rows)
            .map(|(n, l)| hex_line(n, cols, l))
            .collect::<Result<Vec<_>>>()?
    };
    if data.len() != rows {
        return Err(Error::parse(
            n,
            format!("expected {rows} rows, found {}", data.len()),
        ));
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(n, "more rows than declared"));
    }
    BitMatrix::from_rows(cols, data)
}

pub fn format_key_set(s: &KeySet) -> String {
    let mut out = format!("{} {} {}\n", s.ambient_dim(), s.len(), s.allow_zero());
    for k in s.keys() {
        out.push_str(&k.to_hex());
        out.push('\n');
    }
    out
}

pub fn parse_key_set(text: &str) -> Result<KeySet> {
    let mut lines = content_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty key-set file"))?;
    let mut fields = header.split_whitespace();
    let u: usize = parse_field(n, fields.next(), "ambient dimension")?;
    let m: usize = parse_field(n, fields.next(), "key count")?;
    let allow_zero = parse_bool(n, fields.next())?;
    if u == 0 {
        // Zero-dimensional keys have an empty hex form, so there are no lines.
        let keys = vec![BitVector::zeros(0); m];
        return KeySet::new(0, keys, allow_zero);
    }
    let keys = lines
        .map(|(n, l)| hex_line(n, u, l))
        .collect::<Result<Vec<_>>>()?;
    if keys.len() != m {
        return Err(Error::parse(
            n,
            format!("header declares {m} keys, found {}", keys.len()),
        ));
    }
    KeySet::new(u, keys, allow_zero)
}

pub fn read_vector(path: &Path) -> Result<BitVector> {
    parse_vector(&fs::read_to_string(path)?)
}

pub fn read_matrix(path: &Path) -> Result<BitMatrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

pub fn read_key_set(path: &Path) -> Result<KeySet> {
    parse_key_set(&fs::read_to_string(path)?)
}

pub fn write_vector(path: &Path, v: &BitVector) -> Result<()> {
    Ok(fs::write(path, format_vector(v))?)
}

pub fn write_matrix(path: &Path, m: &BitMatrix) -> Result<()> {
    Ok(fs::write(path, format_matrix(m))?)
}

pub fn write_key_set(path: &Path, s: &KeySet) -> Result<()> {
    Ok(fs::write(path, format_key_set(s))?)
}

/// `bucket_hex,load`, heaviest bucket first.
pub fn write_histogram_csv<W: Write>(out: W, hist: &LoadHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bucket_hex", "load"])?;
    for (label, load) in hist.sorted_rows() {
        w.write_record([label, load.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    stage: usize,
    phi: f64,
    phi_minus_one: f64,
    log_phi: f64,
}

/// `stage,phi,phi_minus_one,log_phi`, one row per stage.
pub fn write_trace_csv<W: Write>(out: W, trace: &PotentialTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (stage, (&log_phi, &phi_minus_one)) in
        trace.log_phi.iter().zip(&trace.phi_minus_one).enumerate()
    {
        w.serialize(TraceRow {
            stage,
            phi: log_phi.exp(),
            phi_minus_one,
            log_phi,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `rows` as CSV with a header taken from the field names.
pub fn write_csv_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `rows` as a pretty JSON array followed by a newline.
pub fn write_json_rows<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}
