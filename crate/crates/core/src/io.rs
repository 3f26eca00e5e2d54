//! Plain CSV exchange: two-column signals and one-column-per-atom
//! dictionaries. Comma separated, `.` decimals, LF line endings.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::hilbert::{SampledSignal, SamplingGrid};
use crate::oblique::Dictionary;

/// Largest deviation of a grid column from uniform spacing, relative to the
/// spacing.
const GRID_TOL: f64 = 1e-6;

fn csv_error(line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        line,
        message: message.into(),
    }
}

fn parse(field: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| csv_error(line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(csv_error(line, format!("{what} {field:?} is not finite")));
    }
    Ok(v)
}

/// Read `grid,value` rows. A first row whose first field is not numeric is
/// taken as a header. The grid column must be uniformly spaced.
pub fn read_signal_csv<R: Read>(reader: R) -> Result<SampledSignal> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(i as u64 + 1, |p| p.line());
            csv_error(line, e.to_string())
        })?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && record.get(0).is_some_and(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        if record.len() != 2 {
            return Err(csv_error(line, format!("expected 2 columns, found {}", record.len())));
        }
        points.push(parse(&record[0], line, "grid value")?);
        values.push(parse(&record[1], line, "sample")?);
        lines.push(line);
    }
    if points.len() < 2 {
        return Err(csv_error(lines.last().copied().unwrap_or(1), "need at least two samples"));
    }
    let n = points.len();
    let grid = SamplingGrid::new(points[0], points[n - 1], n)
        .map_err(|e| csv_error(lines[n - 1], e.to_string()))?;
    let h = grid.spacing();
    for (i, (&t, &line)) in points.iter().zip(&lines).enumerate() {
        if (t - grid.point(i)).abs() > GRID_TOL * h {
            return Err(csv_error(line, format!("grid value {t} breaks uniform spacing {h}")));
        }
    }
    SampledSignal::new(grid, values)
}

/// Write `grid,value` rows with a header. Values round-trip exactly.
pub fn write_signal_csv<W: Write>(signal: &SampledSignal, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["grid", "value"]).map_err(err)?;
    for (t, v) in signal.grid().points().zip(signal.as_slice()) {
        w.write_record([t.to_string(), v.to_string()]).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Grid column followed by one column per atom, headed by the atom labels.
pub fn write_dictionary_csv<W: Write>(dict: &Dictionary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(e.to_string());
    let header: Vec<String> = std::iter::once("grid".to_string())
        .chain(dict.labels().iter().map(|l| l.to_string()))
        .collect();
    w.write_record(&header).map_err(err)?;
    for (i, t) in dict.grid().points().enumerate() {
        let row: Vec<String> = std::iter::once(t.to_string())
            .chain(dict.atoms().iter().map(|a| a.as_slice()[i].to_string()))
            .collect();
        w.write_record(&row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
