//! Plain CSV with `#`-prefixed comment headers.
//!
//! Floats are written with the shortest round-trip representation so the same
//! values always produce the same bytes.

use std::io::{self, BufRead, Write};

use crate::{Error, Result};

/// Writes `# comment` lines, a column header line and the rows.
pub fn write_table<W: Write>(
    mut out: W,
    comments: &[String],
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", columns.join(","))?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

/// Reads numeric rows, skipping `#` comments, blank lines and one optional
/// non-numeric header line. Every row must have `width` fields.
pub fn read_table<R: BufRead>(input: R, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) if values.len() == width => rows.push(values),
            Ok(values) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {width} columns, found {}", values.len()),
                })
            }
            Err(_) if !header_seen && rows.is_empty() => header_seen = true,
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}
