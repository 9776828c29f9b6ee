//! CSV output shared by every experiment. Floats are written in a fixed
//! scientific format so repeated runs are byte-identical.

use std::path::Path;

use crate::error::Result;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.12e}")
}

/// Optional timing column: `NA` unless timings were requested.
pub fn fmt_time(v: Option<f64>) -> String {
    v.map(|t| format!("{t:.3}")).unwrap_or_else(|| "NA".to_string())
}

/// Simple in-memory table written through the `csv` crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn to_string_lossy(&self) -> String {
        let mut buf = Vec::new();
        // writing into a Vec cannot fail
        self.write_to(&mut buf).expect("in-memory csv");
        String::from_utf8_lossy(&buf).into_owned()
    }
}
