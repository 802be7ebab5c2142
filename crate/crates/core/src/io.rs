//! CSV and JSON formats.
//!
//! CSV files carry a header row and plain decimal numbers; `f64` values are
//! written with Rust's shortest round-trip representation. JSON floats are
//! written with 17 significant digits so outputs are bit-stable.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

/// A serde_json formatter that writes floats as `d.dddddddddddddddde±x`.
pub struct FullPrecision<F> {
    inner: F,
}

impl FullPrecision<CompactFormatter> {
    pub fn compact() -> Self {
        FullPrecision { inner: CompactFormatter }
    }
}

impl FullPrecision<PrettyFormatter<'static>> {
    pub fn pretty() -> Self {
        FullPrecision { inner: PrettyFormatter::new() }
    }
}

impl<F: Formatter> Formatter for FullPrecision<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

fn serialize_with<T: Serialize + ?Sized, F: Formatter>(value: &T, formatter: F) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, formatter);
    value.serialize(&mut ser).map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Indented JSON with 17-digit floats.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serialize_with(value, FullPrecision::pretty())
}

/// Single-line JSON with 17-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serialize_with(value, FullPrecision::compact())
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize, W: Write>(writer: W, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        writeln!(w, "{}", to_json_line(item)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(from_json).collect()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .read_to_string(&mut s)?;
    Ok(s)
}

/// Writes `text` to `path`, or to standard output when `path` is `None`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// A numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Table::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.iter().map(String::from).collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(Error::Parse("missing header row".into()));
        }
        if header.iter().any(|h| h.parse::<f64>().is_ok()) {
            return Err(Error::Parse("the first row must be a header, found numbers".into()));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: `{field}` is not a number", line + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(Error::Parse(format!("row {} has {} fields, header has {}", line + 2, row.len(), header.len())));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.header.len(), |i, j| self.rows[i][j])
    }

    /// The single column of a one-column table.
    pub fn column(&self) -> Result<Vec<f64>> {
        if self.header.len() != 1 {
            return Err(Error::ShapeMismatch(format!("expected one column, found {}", self.header.len())));
        }
        Ok(self.rows.iter().map(|r| r[0]).collect())
    }

    pub fn from_matrix(m: &DMatrix<f64>, prefix: &str) -> Self {
        Table {
            header: (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect(),
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn from_column(name: &str, values: &[f64]) -> Self {
        Table { header: vec![name.to_string()], rows: values.iter().map(|v| vec![*v]).collect() }
    }
}

pub fn read_design(path: &Path) -> Result<DesignMatrix> {
    DesignMatrix::new(Table::read(path)?.matrix())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    Table::read(path)?.column()
}
