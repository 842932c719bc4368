//! Dataset ingestion and result export.
//!
//! Input CSVs are plain numeric tables: comma separated, UTF-8, LF or CRLF,
//! optionally one header line (detected by its cells not parsing as
//! numbers). Output files write every float with 17 significant digits, so
//! re-importing restores the exact bit patterns.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use tikreg::{DMatrix, DVector};

use crate::CliError;

/// 17 significant digits: enough for a bit-stable f64 round-trip.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Reads an `n x p` numeric table. Errors carry the 1-based file line and
/// column of the offending cell.
pub fn read_numeric_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let name = path.display();

    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        rows.push((i + 1, line.split(',').map(str::trim).collect()));
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{name}: no data rows")));
    }

    // Header autodetection: a first line with any non-numeric cell is a header.
    let all_numeric = |cells: &[&str]| cells.iter().all(|c| c.parse::<f64>().is_ok());
    let start = usize::from(!all_numeric(&rows[0].1));
    if rows.len() == start {
        return Err(CliError::Input(format!("{name}: no data rows after the header")));
    }

    let p = rows[start].1.len();
    let mut flat = Vec::with_capacity((rows.len() - start) * p);
    for (line_no, cells) in &rows[start..] {
        if cells.len() != p {
            return Err(CliError::Input(format!(
                "{name}: line {line_no} has {} columns, expected {p}",
                cells.len()
            )));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!(
                    "{name}: line {line_no}, column {}: cannot parse {cell:?} as a number",
                    j + 1
                ))
            })?;
            flat.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len() - start, p, &flat))
}

/// Reads one integer label per row and relabels the distinct values, in
/// sorted order, to a dense `1..=K`. Returns the labels plus a warning
/// message when the originals were not already dense and 1-based.
pub fn read_segments(path: &Path) -> Result<(Vec<usize>, Option<String>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let name = path.display();

    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.trim_end_matches('\r').trim();
        if cell.is_empty() {
            continue;
        }
        let v: i64 = cell.parse().map_err(|_| {
            CliError::Input(format!(
                "{name}: line {}: cannot parse {cell:?} as an integer label",
                i + 1
            ))
        })?;
        raw.push(v);
    }
    if raw.is_empty() {
        return Err(CliError::Input(format!("{name}: no segment labels")));
    }

    let mut distinct = raw.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels: Vec<usize> = raw
        .iter()
        .map(|v| distinct.binary_search(v).expect("value is in distinct") + 1)
        .collect();
    let already_dense = raw.iter().zip(&labels).all(|(&r, &l)| r == l as i64);
    let warning = (!already_dense).then(|| {
        format!(
            "{name}: labels are not dense 1..=K; relabelled {} distinct values in sorted order",
            distinct.len()
        )
    });
    Ok((labels, warning))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| file_err(path, e))
}

fn finish(path: &Path, mut w: BufWriter<fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| file_err(path, e))
}

/// `curve.csv`: lambda, PRESS per response, GCV per response, df.
pub fn write_curve(
    path: &Path,
    lambdas: &[f64],
    press: &DMatrix<f64>,
    gcv: &DMatrix<f64>,
    df: &DVector<f64>,
) -> Result<(), CliError> {
    let q = press.ncols();
    let mut w = create(path)?;
    let mut header = String::from("lambda");
    for k in 1..=q {
        let _ = write!(header, ",press_r{k}");
    }
    for k in 1..=q {
        let _ = write!(header, ",gcv_r{k}");
    }
    header.push_str(",df");
    writeln!(w, "{header}").map_err(|e| file_err(path, e))?;

    for (l, &lambda) in lambdas.iter().enumerate() {
        let mut line = fmt_float(lambda);
        for k in 0..q {
            line.push(',');
            line.push_str(&fmt_float(press[(l, k)]));
        }
        for k in 0..q {
            line.push(',');
            line.push_str(&fmt_float(gcv[(l, k)]));
        }
        line.push(',');
        line.push_str(&fmt_float(df[l]));
        writeln!(w, "{line}").map_err(|e| file_err(path, e))?;
    }
    finish(path, w)
}

/// One selected model per rule and response.
#[derive(Debug, Serialize)]
pub struct SelectionRecord {
    pub response: usize,
    pub rule: &'static str,
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub index: usize,
    pub criterion_value: f64,
}

pub fn write_selection(path: &Path, records: &[SelectionRecord]) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, records).map_err(|e| file_err(path, e))?;
    writeln!(w).map_err(|e| file_err(path, e))?;
    finish(path, w)
}

/// A selected model's exportable pieces, one column per (rule, response).
pub struct ModelColumn {
    pub name: String,
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub cv_residuals: DVector<f64>,
}

/// `coefficients.csv`: an intercept row, then one row per predictor.
pub fn write_coefficients(path: &Path, columns: &[ModelColumn]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let header: Vec<&str> = std::iter::once("term")
        .chain(columns.iter().map(|c| c.name.as_str()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| file_err(path, e))?;

    let mut line = String::from("intercept");
    for c in columns {
        line.push(',');
        line.push_str(&fmt_float(c.intercept));
    }
    writeln!(w, "{line}").map_err(|e| file_err(path, e))?;

    let p = columns.first().map_or(0, |c| c.coefficients.len());
    for j in 0..p {
        let mut line = format!("b{}", j + 1);
        for c in columns {
            line.push(',');
            line.push_str(&fmt_float(c.coefficients[j]));
        }
        writeln!(w, "{line}").map_err(|e| file_err(path, e))?;
    }
    finish(path, w)
}

/// `residuals.csv`: cross-validated residuals at each selected lambda.
pub fn write_residuals(path: &Path, columns: &[ModelColumn]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let header: Vec<&str> = std::iter::once("row")
        .chain(columns.iter().map(|c| c.name.as_str()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| file_err(path, e))?;

    let n = columns.first().map_or(0, |c| c.cv_residuals.len());
    for i in 0..n {
        let mut line = (i + 1).to_string();
        for c in columns {
            line.push(',');
            line.push_str(&fmt_float(c.cv_residuals[i]));
        }
        writeln!(w, "{line}").map_err(|e| file_err(path, e))?;
    }
    finish(path, w)
}
