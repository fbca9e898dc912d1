//! Minimal CSV writer: `#`-prefixed provenance lines, a header row, then
//! comma-separated rows of 17-significant-digit floats with LF endings.

use std::io::{self, Write};

use crate::linalg::fmt17;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            comments: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for c in &self.comments {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_string_lossy(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table output is ASCII/UTF-8")
    }
}

/// Column names `prefix1..prefixN`, optionally with a unit suffix such as `[rad]`.
pub fn indexed(prefix: &str, n: usize, unit: &str) -> Vec<String> {
    (1..=n)
        .map(|i| {
            if unit.is_empty() {
                format!("{prefix}{i}")
            } else {
                format!("{prefix}{i} [{unit}]")
            }
        })
        .collect()
}
