//! Matrix and label file formats.
//!
//! CSV: comma separated, `.` decimal point. A first record containing any
//! non-numeric field is treated as a header and skipped.
//!
//! Binary: 8-byte magic `PLBMAT01`, then `m` and `n` as little-endian
//! `u64`, then `m * n` little-endian `f64` values in row-major order.
//!
//! Labels: single-column CSV, one 0-based label per line, no header
//! (a header line is tolerated on read).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DataMatrix;

pub const BINARY_MAGIC: &[u8; 8] = b"PLBMAT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|e| io_context(e, path))?;
    match format {
        MatrixFormat::Csv => read_matrix_csv(BufReader::new(file)),
        MatrixFormat::Binary => read_matrix_binary(BufReader::new(file)),
    }
}

pub fn write_matrix(path: &Path, x: &DataMatrix, format: MatrixFormat, header: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| io_context(e, path))?;
    let mut w = BufWriter::new(file);
    match format {
        MatrixFormat::Csv => write_matrix_csv(&mut w, x, header)?,
        MatrixFormat::Binary => write_matrix_binary(&mut w, x)?,
    }
    w.flush()?;
    Ok(())
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Parse(format!(
                    "line {}: {e} in {:?}",
                    line + 1,
                    record.iter().collect::<Vec<_>>()
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("no numeric rows in CSV input".into()));
    }
    DataMatrix::from_rows(&rows)
}

pub fn write_matrix_csv<W: Write>(w: W, x: &DataMatrix, header: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    if header {
        wtr.write_record((0..x.ncols()).map(|j| format!("c{j}")))?;
    }
    for i in 0..x.nrows() {
        wtr.write_record(x.row(i).iter().map(|v| format!("{v}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_matrix_binary<W: Write>(mut w: W, x: &DataMatrix) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(x.nrows() as u64).to_le_bytes())?;
    w.write_all(&(x.ncols() as u64).to_le_bytes())?;
    for v in x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(mut r: R) -> Result<DataMatrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("bad magic in binary matrix file".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let m = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    let len = m
        .checked_mul(n)
        .ok_or_else(|| Error::Parse(format!("binary header overflows: {m}x{n}")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Parse("trailing bytes after binary matrix".into()));
    }
    DataMatrix::from_shape_vec(m, n, data)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(|e| io_context(e, path))?;
    read_labels_from(BufReader::new(file))
}

pub fn read_labels_from<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        match field.parse::<usize>() {
            Ok(v) => labels.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}: '{field}'", line + 1))),
        }
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_context(e, path))?;
    let mut w = BufWriter::new(file);
    for g in labels {
        writeln!(w, "{g}")?;
    }
    w.flush()?;
    Ok(())
}
