//! Panel CSV ingestion and tabular result output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use causal_pvar::{validate_panel, PanelDataset, PanelRow, RawPanel};
use serde_json::{Map, Number, Value};

use crate::CliError;

/// Reads a panel CSV: optional `# policies=K` and `# dummies=a,b` comment
/// lines, then a `unit,time,<variables>` header. Dummy columns are split off
/// as exogenous regressors; the first K remaining variables are policies.
pub fn load_panel_csv(path: &Path) -> Result<PanelDataset, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_panel_csv(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn parse_panel_csv(text: &str) -> Result<PanelDataset, String> {
    let mut n_policies = 1usize;
    let mut dummy_names: Vec<String> = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("policies=") {
                n_policies = v
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad policies count {v:?}"))?;
            } else if let Some(v) = comment.strip_prefix("dummies=") {
                dummy_names = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[0] != "unit" || header[1] != "time" {
        return Err("header must read unit,time,<at least two variables>".into());
    }
    let columns = &header[2..];
    let dummy_idx: Vec<usize> = dummy_names
        .iter()
        .map(|d| {
            columns
                .iter()
                .position(|c| c == d)
                .ok_or_else(|| format!("dummy column {d:?} not in header"))
        })
        .collect::<Result<_, _>>()?;
    let var_idx: Vec<usize> = (0..columns.len())
        .filter(|i| !dummy_idx.contains(i))
        .collect();
    let variable_names: Vec<String> = var_idx.iter().map(|&i| columns[i].clone()).collect();
    if n_policies >= variable_names.len() {
        return Err(format!(
            "{n_policies} policies leave no outcome among {} variables",
            variable_names.len()
        ));
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(format!(
                "row {line}: expected {} fields, got {}",
                header.len(),
                rec.len()
            ));
        }
        let int = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| format!("row {line}: bad integer {s:?}"))
        };
        let num = |s: &str| {
            let v = if s.eq_ignore_ascii_case("nan") || s.is_empty() {
                f64::NAN
            } else {
                s.parse::<f64>()
                    .map_err(|_| format!("row {line}: bad number {s:?}"))?
            };
            Ok::<f64, String>(v)
        };
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(PanelRow {
            unit: int(fields[0])?,
            time: int(fields[1])?,
            values: var_idx
                .iter()
                .map(|&i| num(fields[2 + i]))
                .collect::<Result<_, _>>()?,
            dummies: dummy_idx
                .iter()
                .map(|&i| num(fields[2 + i]))
                .collect::<Result<_, _>>()?,
        });
    }
    let raw = RawPanel {
        n_policies,
        n_outcomes: variable_names.len() - n_policies,
        variable_names,
        dummy_names,
        rows,
    };
    validate_panel(&raw).map_err(|e| e.to_string())
}

pub fn write_panel_csv(panel: &PanelDataset, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "# policies={}", panel.n_policies());
    let dummies = panel.dummies();
    if let Some(d) = dummies {
        let _ = writeln!(out, "# dummies={}", d.names.join(","));
    }
    out.push_str("unit,time");
    for v in panel.variable_names() {
        out.push(',');
        out.push_str(v);
    }
    if let Some(d) = dummies {
        for name in &d.names {
            out.push(',');
            out.push_str(name);
        }
    }
    out.push('\n');
    for u in 0..panel.n_units() {
        for t in 0..panel.n_times() {
            let _ = write!(out, "{},{}", panel.unit_labels()[u], panel.time_labels()[t]);
            for v in panel.cell(u, t) {
                let _ = write!(out, ",{}", fmt_float(*v));
            }
            if let Some(d) = dummies {
                for j in 0..d.names.len() {
                    let _ = write!(out, ",{}", fmt_float(panel.dummy(u, t, j)));
                }
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Str(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Str(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Str(v)
    }
}

/// A named result table; written as `<name>.csv` or `<name>.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render(table: &Table, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(
                &table
                    .header
                    .iter()
                    .map(|h| csv_field(h))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            out.push('\n');
            for row in &table.rows {
                let fields: Vec<String> = row
                    .iter()
                    .map(|c| match c {
                        Cell::Num(v) => fmt_float(*v),
                        Cell::Int(v) => v.to_string(),
                        Cell::Bool(v) => v.to_string(),
                        Cell::Str(s) => csv_field(s),
                    })
                    .collect();
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        Format::Jsonl => {
            for row in &table.rows {
                let mut obj = Map::new();
                for (h, c) in table.header.iter().zip(row) {
                    let v = match c {
                        Cell::Num(v) => Number::from_f64(*v).map_or(Value::Null, Value::Number),
                        Cell::Int(v) => Value::from(*v),
                        Cell::Bool(v) => Value::Bool(*v),
                        Cell::Str(s) => Value::String(s.clone()),
                    };
                    obj.insert(h.clone(), v);
                }
                out.push_str(&Value::Object(obj).to_string());
                out.push('\n');
            }
        }
    }
    out
}

/// Writes every table into `dir`, creating it if needed.
pub fn write_results(dir: &Path, tables: &[Table], format: Format) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for t in tables {
        let path = dir.join(format!("{}.{}", t.name, format.extension()));
        fs::write(&path, render(t, format)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# policies=1\nunit,time,w,y\n1,1,0.5,1.0\n1,2,0.1,2.0\n1,3,0.3,1.5\n2,1,1.0,0.0\n2,2,0.2,0.5\n2,3,0.9,0.7\n";

    #[test]
    fn parses_sample_panel() {
        let p = parse_panel_csv(SAMPLE).unwrap();
        assert_eq!((p.n_units(), p.n_times(), p.m()), (2, 3, 2));
        assert_eq!(p.value(1, 2, 1), 0.7);
    }

    #[test]
    fn reports_missing_cell() {
        let text = SAMPLE.replace("2,3,0.9,0.7\n", "");
        assert!(parse_panel_csv(&text).unwrap_err().contains("unit"));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let p = parse_panel_csv(SAMPLE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_panel_csv(&p, &path).unwrap();
        let q = load_panel_csv(&path).unwrap();
        assert_eq!(p.values(), q.values());
    }

    #[test]
    fn empty_table_has_header_only() {
        let t = Table::new("x", &["a", "b"]);
        assert_eq!(render(&t, Format::Csv), "a,b\n");
        assert_eq!(render(&t, Format::Jsonl), "");
    }
}
