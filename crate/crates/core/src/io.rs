//! Table output with an embedded JSON header, and Rabi dataset files.
//!
//! CSV files open with the header as `#`-prefixed pretty JSON lines, then one
//! row of column names. JSON files carry the same header next to the rows.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiment_fit::{DataPoint, RabiDataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub doc: String,
}

/// Numeric table; flags are stored as 0/1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Table {
            columns: columns
                .iter()
                .map(|(n, d)| Column {
                    name: n.to_string(),
                    doc: d.to_string(),
                })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the columns");
        self.rows.push(row);
    }
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Header {
    pub command: String,
    pub seed: u64,
    pub config: Value,
}

fn header_value(header: &Header, table: &Table) -> Value {
    let columns: serde_json::Map<String, Value> = table
        .columns
        .iter()
        .map(|c| (c.name.clone(), Value::String(c.doc.clone())))
        .collect();
    json!({
        "generator": concat!("spinbath ", env!("CARGO_PKG_VERSION")),
        "command": header.command,
        "seed": header.seed,
        "config": header.config,
        "columns": columns,
        "column_order": table.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
    })
}

fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn write_csv(out: &mut (impl Write + ?Sized), header: &Header, table: &Table) -> Result<()> {
    let pretty = serde_json::to_string_pretty(&header_value(header, table))
        .map_err(|e| Error::Io(e.to_string()))?;
    for line in pretty.lines() {
        writeln!(out, "# {line}")?;
    }
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    writeln!(out, "{}", names.join(","))?;
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Rows become objects keyed by column name; NaN is written as null.
pub fn write_json(out: &mut (impl Write + ?Sized), header: &Header, table: &Table) -> Result<()> {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            Value::Object(
                table
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, x)| (c.name.clone(), number(*x)))
                    .collect(),
            )
        })
        .collect();
    let mut doc = header_value(header, table);
    doc["rows"] = Value::Array(rows);
    write_value(out, &doc)
}

/// A report document: the header plus arbitrary fields under `result`.
pub fn write_report(out: &mut (impl Write + ?Sized), header: &Header, result: &impl Serialize) -> Result<()> {
    let doc = json!({
        "generator": concat!("spinbath ", env!("CARGO_PKG_VERSION")),
        "command": header.command,
        "seed": header.seed,
        "config": header.config,
        "result": serde_json::to_value(result).map_err(|e| Error::Io(e.to_string()))?,
    });
    write_value(out, &doc)
}

fn write_value(out: &mut (impl Write + ?Sized), doc: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

/// Split a CSV written by [`write_csv`] into its header JSON and rows.
pub fn read_csv(text: &str) -> Result<(Value, Vec<String>, Vec<Vec<f64>>)> {
    let mut json_text = String::new();
    let mut lines = text.lines();
    let mut names = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix('#') {
            json_text.push_str(rest.strip_prefix(' ').unwrap_or(rest));
            json_text.push('\n');
        } else {
            names = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
            break;
        }
    }
    let header = if json_text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&json_text).map_err(|e| Error::Io(format!("CSV header: {e}")))?
    };
    let names = names.ok_or_else(|| Error::Io("CSV has no column row".into()))?;
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Io(format!("row {}: `{}` is not a number", k + 1, s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != names.len() {
            return Err(Error::Io(format!("row {} has {} cells, expected {}", k + 1, row.len(), names.len())));
        }
        rows.push(row);
    }
    Ok((header, names, rows))
}

/// Sidecar file holding dataset metadata: `data.csv` → `data.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Write `(omega, p1, sigma)` rows plus a sidecar with `fixed_time`.
pub fn write_dataset(path: &Path, data: &RabiDataset, meta: &Value) -> Result<()> {
    let mut text = String::from("omega,p1,sigma\n");
    for p in &data.points {
        text.push_str(&format!("{},{},{}\n", p.omega_rabi, p.p1, p.sigma));
    }
    fs::write(path, text)?;
    let mut side = meta.clone();
    if !side.is_object() {
        side = json!({});
    }
    side["fixed_time"] = json!(data.fixed_time);
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}

/// Read a dataset CSV with header `omega,p1,sigma`; `fixed_time` comes from
/// the argument or else the sidecar.
pub fn read_dataset(path: &Path, fixed_time: Option<f64>) -> Result<RabiDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (_, names, rows) = read_csv(&text)?;
    let col = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Io(format!("{}: missing column `{name}`", path.display())))
    };
    let (w, p, s) = (col("omega")?, col("p1")?, col("sigma")?);
    let fixed_time = match fixed_time {
        Some(t) => t,
        None => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(|e| {
                Error::Io(format!("no fixed time given and sidecar {} unreadable: {e}", side.display()))
            })?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
            v["fixed_time"]
                .as_f64()
                .ok_or_else(|| Error::Io(format!("{}: missing numeric `fixed_time`", side.display())))?
        }
    };
    let data = RabiDataset {
        fixed_time,
        points: rows
            .iter()
            .map(|r| DataPoint {
                omega_rabi: r[w],
                p1: r[p],
                sigma: r[s],
            })
            .collect(),
    };
    data.check()?;
    Ok(data)
}
