//! Deterministic CSV and JSON writers.
//!
//! Every float is printed with 17 significant digits in scientific notation
//! (`{:.16e}`), which round-trips `f64` exactly and does not depend on the
//! locale, so two runs producing the same numbers produce the same bytes.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::error::Result;

/// `x` with 17 significant digits, or `nan`/`inf`/`-inf`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Identification written into every output file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metadata {
    pub code_version: String,
    pub config_digest: String,
}

/// One CSV cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    U(usize),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::F(x) => format_f64(x),
            Cell::U(n) => n.to_string(),
        }
    }
}

/// CSV text: `#`-prefixed metadata lines, a header row, then the rows.
pub fn csv_text(meta: &Metadata, notes: &[(&str, String)], header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# code_version: {}", meta.code_version);
    let _ = writeln!(out, "# config_digest: {}", meta.config_digest);
    for (k, v) in notes {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|c| c.render()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(
    path: &Path,
    meta: &Metadata,
    notes: &[(&str, String)],
    header: &[&str],
    rows: &[Vec<Cell>],
) -> Result<()> {
    std::fs::write(path, csv_text(meta, notes, header, rows))?;
    Ok(())
}

/// Pretty JSON formatter printing floats like [`format_f64`] (non-finite
/// values become `null`).
struct FixedFloats<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format!("{value:.16e}").as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// `{"metadata": ..., "report": value}` as pretty JSON.
pub fn json_text<T: Serialize>(meta: &Metadata, value: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        metadata: &'a Metadata,
        report: &'a T,
    }
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FixedFloats(PrettyFormatter::new()));
    Doc { metadata: meta, report: value }
        .serialize(&mut ser)
        .map_err(|e| crate::error::WaveError::InvalidArgument(format!("cannot serialize report: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Metadata, value: &T) -> Result<()> {
    std::fs::write(path, json_text(meta, value)?)?;
    Ok(())
}
