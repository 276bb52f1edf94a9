use std::path::Path;

use anyhow::{Context, Result};

/// `x` rounded to six significant digits and printed in its shortest form.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    // Avoid "-0".
    if rounded == 0.0 {
        return "0".into();
    }
    if rounded.abs() < 1e-6 || rounded.abs() >= 1e15 {
        return format!("{rounded:e}");
    }
    format!("{rounded}")
}

/// An in-memory CSV table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A single table cell.
pub enum Cell<'a> {
    Str(&'a str),
    Num(f64),
    Int(u64),
}

impl From<f64> for Cell<'_> {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell<'_> {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<u64> for Cell<'_> {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(x: &'a str) -> Self {
        Cell::Str(x)
    }
}

impl<'a> From<&'a String> for Cell<'a> {
    fn from(x: &'a String) -> Self {
        Cell::Str(x)
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<Cell<'_>>) {
        assert_eq!(cells.len(), self.header.len(), "row width differs from header");
        self.rows.push(
            cells
                .into_iter()
                .map(|c| match c {
                    Cell::Str(s) => s.to_string(),
                    Cell::Num(x) => sig6(x),
                    Cell::Int(i) => i.to_string(),
                })
                .collect(),
        );
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parsed numeric value at `row`, `col`.
    pub fn value(&self, row: usize, col: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(col)?)?.parse().ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}
