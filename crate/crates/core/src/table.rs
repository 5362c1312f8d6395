//! Minimal comma-separated table reading and writing shared by the
//! artifact formats (phase maps, invariants, pulses, trajectories).

use crate::error::{Error, Result};

/// Formats a float with 12 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{:.11e}", x)
}

/// A parsed table: header columns plus rows of raw fields.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty table".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {}",
                    lineno + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    /// Fails unless the header matches `expected` exactly.
    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.len() != expected.len()
            || self.header.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(Error::Parse(format!(
                "unexpected header `{}`, expected `{}`",
                self.header.join(","),
                expected.join(",")
            )));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>()
            .map_err(|_| Error::Parse(format!("row {}: `{}` is not a number", row + 1, raw)))
    }

    pub fn usize_at(&self, row: usize, col: usize) -> Result<usize> {
        let raw = &self.rows[row][col];
        raw.parse::<usize>()
            .map_err(|_| Error::Parse(format!("row {}: `{}` is not an index", row + 1, raw)))
    }
}

/// Builds table text from a header and pre-formatted rows.
pub fn write_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_to_twelve_digits() {
        for x in [1.0, -0.1234567890123456, 6.02e23, 1e-300, std::f64::consts::PI] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11, "{x} -> {back}");
        }
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = Table::parse("a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn header_checked() {
        let t = Table::parse("a,b\n1,2\n").unwrap();
        assert!(t.expect_header(&["a", "b"]).is_ok());
        assert!(t.expect_header(&["a", "c"]).is_err());
        assert_eq!(t.f64_at(0, 1).unwrap(), 2.0);
    }
}
