//! Deterministic text output. Every float is printed with 17 significant
//! digits so files from equal seeds compare equal byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde_json::{Map, Number, Value};

/// `d.dddddddddddddddde±x`, or `inf`/`-inf`/`NaN`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON number with 17 significant digits; non-finite values become strings.
pub fn json_num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(float(x).parse::<Number>().expect("formatted float is a JSON number"))
    } else {
        Value::String(float(x))
    }
}

pub fn json_matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| Value::Array(row.iter().map(|&v| json_num(v)).collect()))
            .collect(),
    )
}

pub fn json_object(entries: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in entries {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}

/// Comma-separated table built row by row.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns, "row width");
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(1.0), "1.0000000000000000e0");
        assert_eq!(float(f64::INFINITY), "inf");
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_numbers_keep_their_text() {
        let v = json_object(vec![("a", json_num(0.1)), ("b", json_num(f64::NAN))]);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"a":1.0000000000000001e-1,"b":"NaN"}"#
        );
    }
}
