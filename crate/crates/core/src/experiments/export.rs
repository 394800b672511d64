use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

/// A rectangular result table with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// `%.10g`: ten significant digits, trailing zeros trimmed, exponent form
/// outside `[1e-4, 1e10)`.
pub fn format_sig10(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.9e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..10).contains(&exp) {
        let fixed = format!("{:.*}", (9 - exp) as usize, v);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(&self.columns).map_err(ser)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Float(f) => format_sig10(*f),
                Cell::Text(t) => t.clone(),
            }))
            .map_err(ser)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Array of objects keyed by column name, in column order. Floats carry
    /// the same ten significant digits as the CSV; non-finite floats are null.
    pub fn to_json_value(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(name, cell)| {
                            let v = match cell {
                                Cell::Int(i) => Value::from(*i),
                                Cell::Float(f) => format_sig10(*f)
                                    .parse::<f64>()
                                    .ok()
                                    .and_then(serde_json::Number::from_f64)
                                    .map_or(Value::Null, Value::Number),
                                Cell::Text(t) => Value::from(t.clone()),
                            };
                            (name.clone(), v)
                        })
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_json_value())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes `table` to `path`. Nothing is written for an empty table.
pub fn export_results(table: &ResultTable, format: ExportFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() || table.columns.is_empty() {
        return Err(Error::invalid("table", "nothing to export"));
    }
    let body = match format {
        ExportFormat::Csv => table.to_csv()?,
        ExportFormat::Json => table.to_json()?,
    };
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ResultTable {
        ResultTable {
            columns: vec!["config_id".into(), "estimator".into(), "mse".into()],
            rows: vec![
                vec![
                    Cell::Int(0),
                    Cell::Text("mle".into()),
                    Cell::Float(1.0123456789012),
                ],
                vec![
                    Cell::Int(0),
                    Cell::Text("ccmle".into()),
                    Cell::Float(2.5e-7),
                ],
            ],
        }
    }

    #[test]
    fn sig10_formatting() {
        assert_eq!(format_sig10(0.5), "0.5");
        assert_eq!(format_sig10(1.0123456789012), "1.012345679");
        assert_eq!(format_sig10(-123.0), "-123");
        assert_eq!(format_sig10(2.5e-7), "2.5e-07");
        assert_eq!(format_sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(format_sig10(9.99999999999), "10");
        assert_eq!(format_sig10(12345678901.0), "1.23456789e+10");
        assert_eq!(format_sig10(0.0), "0");
    }

    #[test]
    fn csv_layout() {
        let csv = table().to_csv().unwrap();
        assert_eq!(
            csv,
            "config_id,estimator,mse\n0,mle,1.012345679\n0,ccmle,2.5e-07\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let parsed: Value = serde_json::from_str(&table().to_json().unwrap()).unwrap();
        let rows = parsed.as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["mse"].as_f64().unwrap(), 1.012345679);
        assert_eq!(rows[1]["estimator"], "ccmle");
        assert_eq!(rows[1]["mse"].as_f64().unwrap(), 2.5e-7);
        let keys: Vec<&String> = rows[0].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["config_id", "estimator", "mse"]);
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = std::env::temp_dir().join(format!("selex-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        let empty = ResultTable {
            columns: vec!["a".into()],
            rows: vec![],
        };
        assert!(export_results(&empty, ExportFormat::Csv, &path).is_err());
        assert!(!path.exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn io_errors_carry_the_path() {
        let path = Path::new("/nonexistent-dir/selex/out.csv");
        match export_results(&table(), ExportFormat::Csv, path) {
            Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("/nonexistent-dir")),
            other => panic!("{other:?}"),
        }
    }
}
