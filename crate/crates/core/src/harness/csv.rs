//! CSV emission with round-trip-exact number formatting.
//!
//! Every file starts with a fixed header line; floats print with 17
//! significant digits and '.' decimals so plotting tools and regression
//! diffs both see stable, exact values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Formats a double with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// One CSV value.
pub enum Field {
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Str(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Str(v)
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
    columns: usize,
}

impl CsvWriter {
    /// Creates the file and writes the header line.
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvWriter {
            out,
            columns: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[Field]) -> std::io::Result<()> {
        assert_eq!(fields.len(), self.columns, "row width != header width");
        let mut line = String::new();
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            match f {
                Field::Int(v) => line.push_str(&v.to_string()),
                Field::Float(v) => line.push_str(&fmt_f64(*v)),
                Field::Str(s) => {
                    assert!(
                        !s.contains(',') && !s.contains('\n'),
                        "string fields must not need quoting"
                    );
                    line.push_str(s);
                }
            }
        }
        writeln!(self.out, "{line}")
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}
