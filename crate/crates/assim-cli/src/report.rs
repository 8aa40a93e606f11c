//! Run reports and their CSV and JSON encodings.
//!
//! CSV: a header line, then one line per row. The first column is an integer
//! key (`step`, or `N` for rate studies); every other value is written with
//! 17 significant digits. JSON: an object with keys `config`, `rows`,
//! `summary` and `version`; each row is an object keyed by column name and
//! non-finite values are `null`.

use std::collections::BTreeMap;
use std::io::Write;

use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    /// Column names; the first is the integer key.
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub summary: BTreeMap<String, f64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub key: u64,
    pub values: Vec<f64>,
}

impl Report {
    pub fn new(config: ExperimentConfig, key: &str, columns: Vec<String>) -> Self {
        let mut all = vec![key.to_string()];
        all.extend(columns);
        Self {
            config,
            columns: all,
            rows: Vec::new(),
            summary: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn push(&mut self, key: u64, values: Vec<f64>) {
        debug_assert_eq!(values.len() + 1, self.columns.len());
        self.rows.push(Row { key, values });
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| if idx == 0 { r.key as f64 } else { r.values[idx - 1] }).collect())
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let mut line = row.key.to_string();
            for v in &row.values {
                line.push(',');
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let num = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut obj = Map::new();
                obj.insert(self.columns[0].clone(), json!(r.key));
                for (c, v) in self.columns[1..].iter().zip(&r.values) {
                    obj.insert(c.clone(), num(*v));
                }
                Value::Object(obj)
            })
            .collect();
        let summary: Map<String, Value> = self.summary.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
        json!({
            "config": serde_json::to_value(&self.config).expect("config serializes"),
            "rows": rows,
            "summary": summary,
            "version": self.version,
        })
    }

    /// Inverse of [`Report::to_json`]; `null` reads back as NaN. Column order
    /// comes from the first row, so an empty report needs `columns`.
    pub fn from_json(value: &Value, columns: Option<Vec<String>>) -> Result<Self, String> {
        let obj = value.as_object().ok_or("report must be an object")?;
        let config: ExperimentConfig =
            serde_json::from_value(obj.get("config").cloned().ok_or("missing config")?).map_err(|e| e.to_string())?;
        let rows_json = obj.get("rows").and_then(Value::as_array).ok_or("missing rows")?;
        let columns = match (columns, rows_json.first()) {
            (Some(c), _) => c,
            (None, Some(Value::Object(first))) => first.keys().cloned().collect(),
            _ => return Err("cannot infer columns from an empty report".into()),
        };
        let as_f64 = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
        let mut rows = Vec::new();
        for r in rows_json {
            let r = r.as_object().ok_or("row must be an object")?;
            let key = r.get(&columns[0]).and_then(Value::as_u64).ok_or("row key must be an integer")?;
            let values = columns[1..]
                .iter()
                .map(|c| r.get(c).map(as_f64).ok_or(format!("row lacks column {c}")))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(Row { key, values });
        }
        let summary = obj
            .get("summary")
            .and_then(Value::as_object)
            .ok_or("missing summary")?
            .iter()
            .map(|(k, v)| (k.clone(), as_f64(v)))
            .collect();
        let version = obj.get("version").and_then(Value::as_str).ok_or("missing version")?.to_string();
        Ok(Self {
            config,
            columns,
            rows,
            summary,
            version,
        })
    }

    pub fn write(&self, out: &mut dyn Write, format: Format) -> std::io::Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, &self.to_json())?;
                writeln!(out)
            }
        }
    }

    /// Writes to `path`, or to stdout when `path` is `None`.
    pub fn emit(&self, path: Option<&str>, format: Format) -> Result<(), CliError> {
        fn io(p: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
            move |source| CliError::Io { path: p.to_string(), source }
        }
        match path {
            Some(p) => {
                let mut buf = Vec::new();
                self.write(&mut buf, format).map_err(io(p))?;
                std::fs::write(p, buf).map_err(io(p))
            }
            None => {
                let stdout = std::io::stdout();
                self.write(&mut stdout.lock(), format).map_err(io("<stdout>"))
            }
        }
    }
}
