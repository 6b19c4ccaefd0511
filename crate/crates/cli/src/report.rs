//! Report documents: JSON with a timestamped envelope and a byte-stable
//! body, plus flat CSV extraction of named tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub meta: Meta,
    pub body: Body,
}

/// Run metadata excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub timestamp_unix: u64,
    pub tool: String,
}

/// Everything determined by `(config, seed)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Body {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    /// "pass" or "reject" for experiments with a verdict, absent otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub summary: Value,
    pub tables: BTreeMap<String, Table>,
}

/// A rectangular table with a stable column order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Value::String(s) => csv_cell(s),
                    other => other.to_string(),
                })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    pub fn new(body: Body) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Report {
            meta: Meta {
                timestamp_unix,
                tool: format!("rostlab {}", env!("CARGO_PKG_VERSION")),
            },
            body,
        }
    }

    /// Canonical bytes of the deterministic body.
    pub fn body_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.body).expect("body serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<experiment>-<config_hash>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(format!("{}-{}.json", self.body.experiment, self.body.config_hash));
        std::fs::write(&path, self.to_json_string())
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Extracts a named table as CSV; unknown names list what is available.
pub fn emit_plotdata(report: &Report, table: &str) -> anyhow::Result<String> {
    match report.body.tables.get(table) {
        Some(t) => Ok(t.to_csv()),
        None => {
            let available: Vec<&str> = report.body.tables.keys().map(|s| s.as_str()).collect();
            bail!("no table '{table}' in report; available: {}", available.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_report() -> Report {
        let mut tables = BTreeMap::new();
        let mut t = Table::new(&["value", "mass"]);
        t.push(vec![json!(0.2), json!(0.75)]);
        t.push(vec![json!(0.6), json!(0.25)]);
        tables.insert("overlap_histogram".to_string(), t);
        Report::new(Body {
            schema_version: SCHEMA_VERSION,
            experiment: "rpc-sample".into(),
            seed: 7,
            config_hash: "abc".into(),
            config: json!({}),
            verdict: Some("pass".into()),
            summary: json!({"k": 2}),
            tables,
        })
    }

    #[test]
    fn csv_has_header_and_stable_order() {
        let report = sample_report();
        let csv = emit_plotdata(&report, "overlap_histogram").unwrap();
        assert_eq!(csv, "value,mass\n0.2,0.75\n0.6,0.25\n");
    }

    #[test]
    fn missing_table_lists_available() {
        let report = sample_report();
        let err = emit_plotdata(&report, "nope").unwrap_err().to_string();
        assert!(err.contains("overlap_histogram"), "{err}");
    }

    #[test]
    fn body_bytes_ignore_meta() {
        let a = sample_report();
        let mut b = a.clone();
        b.meta.timestamp_unix += 100;
        assert_eq!(a.body_bytes(), b.body_bytes());
    }

    #[test]
    fn csv_quotes_special_cells() {
        let mut t = Table::new(&["name"]);
        t.push(vec![json!("a,b")]);
        assert_eq!(t.to_csv(), "name\n\"a,b\"\n");
    }
}
