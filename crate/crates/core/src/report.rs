//! Study reports: column tables, named verdicts, and deterministic JSON/CSV
//! output (17 significant digits, LF line endings).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// `x` with 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Num(Vec<f64>),
    Bool(Vec<bool>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Num(v) => v.len(),
            Column::Bool(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, i: usize) -> String {
        match self {
            Column::Num(v) => fmt17(v[i]),
            Column::Bool(v) => v[i].to_string(),
            Column::Text(v) => {
                let s = &v[i];
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// Named columns of equal length; column order is insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<(String, Column)>,
}

impl Table {
    pub fn new(name: impl Into<String>) -> Self {
        Table { name: name.into(), columns: Vec::new() }
    }

    pub fn with(mut self, name: impl Into<String>, col: Column) -> Self {
        self.columns.push((name.into(), col));
        self
    }

    pub fn num(self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.with(name, Column::Num(values))
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn numbers(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            Column::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, c)| c.len())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.rows() {
            let row: Vec<String> = self.columns.iter().map(|(_, c)| c.cell(i)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// `table.column` the verdict was computed from.
    pub column: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
}

impl Default for Environment {
    fn default() -> Self {
        Environment { package: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub study: String,
    pub config: serde_json::Value,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub environment: Environment,
}

impl ExperimentReport {
    pub fn new(study: impl Into<String>, config: serde_json::Value) -> Self {
        ExperimentReport {
            schema: SCHEMA_VERSION,
            study: study.into(),
            config,
            tables: Vec::new(),
            verdicts: Vec::new(),
            metadata: BTreeMap::new(),
            environment: Environment::default(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn push_verdict(&mut self, name: &str, passed: bool, column: &str, detail: impl Into<String>) {
        self.verdicts.push(Verdict { name: name.into(), passed, column: column.into(), detail: detail.into() });
    }

    pub fn meta(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metadata.insert(key.into(), v);
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Verdicts must point at an existing `table.column`.
    pub fn check_references(&self) -> Result<()> {
        for v in &self.verdicts {
            let (t, c) = v
                .column
                .split_once('.')
                .ok_or_else(|| LabError::invalid("verdict", format!("`{}` has no table.column reference", v.name)))?;
            if self.table(t).and_then(|t| t.column(c)).is_none() {
                return Err(LabError::invalid("verdict", format!("`{}` references missing column {}", v.name, v.column)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// Writes `report.json` and `tables/<name>.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("tables"))?;
        fs::write(dir.join("report.json"), self.to_json())?;
        for t in &self.tables {
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            fs::write(dir.join("tables").join(format!("{}.csv", t.name)), buf)?;
        }
        Ok(())
    }
}

/// JSON formatter printing floats with 17 significant digits.
struct Fixed17;

impl serde_json::ser::Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(fmt17(value as f64).as_bytes())
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17);
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
