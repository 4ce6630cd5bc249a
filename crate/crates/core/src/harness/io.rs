//! Flat-file formats.
//!
//! Measurements: `frame,station,pseudo_range_m`, one row per (frame,
//! station), frames and stations ascending. Fixes: `frame,x_m,y_m[,z_m],
//! offset_m,residual_norm,condition,converged,degenerate,warmup` with empty
//! cells for absent values. Floats are written with 17 significant digits,
//! enough to round-trip any `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{Frame, Trajectory};
use crate::solvers::Fix;

pub const MEASUREMENT_HEADER: [&str; 3] = ["frame", "station", "pseudo_range_m"];

/// `f64` in scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_measurements<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(MEASUREMENT_HEADER)?;
    for f in &traj.frames {
        let frame = f.frame_index.to_string();
        for (s, r) in f.pseudo_ranges.iter().enumerate() {
            w.write_record([frame.as_str(), &s.to_string(), &fmt_f64(*r)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a measurement CSV into frames `0..F` of `n_stations` each. Rows may
/// come in any order but every (frame, station) cell must appear exactly once.
pub fn read_measurements<R: Read>(input: R, n_stations: usize) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(MEASUREMENT_HEADER) {
        return Err(Error::Data(format!(
            "expected header {:?}, found {:?}",
            MEASUREMENT_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Data(format!("row {row}: missing column {k}")));
        let frame: usize = field(0)?
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: bad frame index")))?;
        let station: usize = field(1)?
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: bad station index")))?;
        let value: f64 = field(2)?
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: bad pseudo-range")))?;
        if !value.is_finite() {
            return Err(Error::Data(format!("row {row}: non-finite pseudo-range")));
        }
        if station >= n_stations {
            return Err(Error::Data(format!(
                "row {row}: station {station} but the scenario has {n_stations} stations"
            )));
        }
        if frame >= cells.len() {
            cells.resize(frame + 1, vec![None; n_stations]);
        }
        if cells[frame][station].replace(value).is_some() {
            return Err(Error::Data(format!("row {row}: duplicate frame {frame} station {station}")));
        }
    }
    if cells.is_empty() {
        return Err(Error::NoData);
    }
    let frames = cells
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let values = row
                .into_iter()
                .enumerate()
                .map(|(s, v)| v.ok_or_else(|| Error::Data(format!("frame {k}: station {s} missing"))))
                .collect::<Result<Vec<_>>>()?;
            Frame::new(k, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(frames, None)
}

pub fn fixes_header(dim: usize) -> Vec<&'static str> {
    let mut h = vec!["frame", "x_m", "y_m"];
    if dim == 3 {
        h.push("z_m");
    }
    h.extend(["offset_m", "residual_norm", "condition", "converged", "degenerate", "warmup"]);
    h
}

pub fn write_fixes<W: Write>(out: W, fixes: &[Fix], dim: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(fixes_header(dim))?;
    for f in fixes {
        let mut rec = vec![f.frame_index.to_string()];
        for k in 0..dim {
            rec.push(fmt_opt(f.position.map(|p| p.coords()[k])));
        }
        rec.push(fmt_opt(f.offset));
        rec.push(fmt_opt(Some(f.residual_norm).filter(|v| v.is_finite())));
        rec.push(fmt_opt(f.condition_number));
        rec.push(f.converged.to_string());
        rec.push(f.degenerate.to_string());
        rec.push(f.warmup.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a plot-ready table: a header and rows of already formatted cells.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
