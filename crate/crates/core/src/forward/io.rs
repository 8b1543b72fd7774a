//! `LEADFIELD v1` files.
//!
//! The first line is `LEADFIELD v1 rows=<m> cols=<3K> modality=<EEG|MEG|COMBINED>`.
//! The text encoding follows with `m` lines of space-separated values at 17
//! significant digits; the binary encoding follows with row-major
//! little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{LeadField, Modality, Units};
use crate::error::{Error, Result};

const MAGIC: &str = "LEADFIELD v1";

fn header(lf: &LeadField) -> String {
    format!(
        "{MAGIC} rows={} cols={} modality={}\n",
        lf.rows(),
        lf.cols(),
        lf.modality()
    )
}

pub fn save_leadfield(lf: &LeadField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(lf.rows() * lf.cols() * 25 + 64);
    out.push_str(&header(lf));
    for row in lf.matrix().row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_leadfield_binary(lf: &LeadField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(lf.rows() * lf.cols() * 8 + 64);
    out.extend_from_slice(header(lf).as_bytes());
    for row in lf.matrix().row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Read either encoding; the binary form is recognized by its exact payload
/// size together with at least one byte that cannot occur in the text form.
pub fn load_leadfield(path: impl AsRef<Path>) -> Result<LeadField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, column: Option<usize>, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };

    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail(1, None, "missing header line".into()))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| fail(1, None, "header is not UTF-8".into()))?;
    let (rows, cols, modality) = parse_header(head.trim_end_matches('\r')).map_err(|m| fail(1, None, m))?;
    let payload = &bytes[nl + 1..];

    let looks_binary = payload.len() == rows * cols * 8
        && payload
            .iter()
            .any(|b| !(b.is_ascii_graphic() || b.is_ascii_whitespace()));
    let values = if looks_binary {
        let mut values = Vec::with_capacity(rows * cols);
        for (k, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(fail(
                    k / cols + 2,
                    Some(k % cols + 1),
                    format!("non-finite value at row {}, column {}", k / cols + 1, k % cols + 1),
                ));
            }
            values.push(v);
        }
        values
    } else {
        let text = std::str::from_utf8(payload).map_err(|_| fail(2, None, "payload is neither text nor binary".into()))?;
        let mut values = Vec::with_capacity(rows * cols);
        let mut lines = text.lines();
        for r in 0..rows {
            let line_no = r + 2;
            let line = lines
                .next()
                .ok_or_else(|| fail(line_no, None, format!("missing row {} of {rows}", r + 1)))?;
            let before = values.len();
            for (c, tok) in line.split_whitespace().enumerate() {
                let v: f64 = tok.parse().map_err(|_| {
                    fail(line_no, Some(c + 1), format!("row {}: cannot parse {tok:?}", r + 1))
                })?;
                if !v.is_finite() {
                    return Err(fail(
                        line_no,
                        Some(c + 1),
                        format!("non-finite value at row {}, column {}", r + 1, c + 1),
                    ));
                }
                values.push(v);
            }
            let found = values.len() - before;
            if found != cols {
                return Err(fail(
                    line_no,
                    None,
                    format!("row {} has {found} values, header declares {cols}", r + 1),
                ));
            }
        }
        if let Some((k, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(fail(rows + 2 + k, None, format!("more rows than the declared {rows}")));
        }
        values
    };

    let units = match modality {
        Modality::Eeg => Units::VoltPerAm,
        Modality::Meg => Units::TeslaPerAm,
        Modality::Combined => Units::Arbitrary,
    };
    LeadField::new(DMatrix::from_row_slice(rows, cols, &values), modality, units)
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, Modality), String> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| format!("header must start with {MAGIC:?}"))?;
    let (mut rows, mut cols, mut modality) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {field:?}"))?;
        match key {
            "rows" => rows = Some(value.parse::<usize>().map_err(|_| format!("bad rows {value:?}"))?),
            "cols" => cols = Some(value.parse::<usize>().map_err(|_| format!("bad cols {value:?}"))?),
            "modality" => modality = Some(value.parse::<Modality>().map_err(|e| e.to_string())?),
            other => return Err(format!("unknown header field {other:?}")),
        }
    }
    let rows = rows.ok_or("header lacks rows=")?;
    let cols = cols.ok_or("header lacks cols=")?;
    let modality = modality.ok_or("header lacks modality=")?;
    if rows == 0 || cols == 0 || cols % 3 != 0 {
        return Err(format!("invalid dimensions {rows}x{cols}"));
    }
    Ok((rows, cols, modality))
}
