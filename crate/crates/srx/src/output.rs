//! Report files. Every file names the tool version and the scenario hash;
//! nothing time- or machine-dependent is written, so identical inputs give
//! identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub command: &'static str,
    pub scenario_hash: String,
}

impl Meta {
    pub fn csv_comment(&self) -> String {
        format!(
            "# srx {VERSION} command={} scenario={}",
            self.command, self.scenario_hash
        )
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": "srx",
            "version": VERSION,
            "command": self.command,
            "scenario_sha256": self.scenario_hash,
        })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// `prefix1..prefixn`.
pub fn columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// Formats a numeric CSV row.
pub fn nums(row: impl IntoIterator<Item = f64>) -> Vec<String> {
    row.into_iter().map(num).collect()
}

/// Writes a CSV with a leading `#` metadata line.
pub fn write_csv<I>(path: &Path, meta: &Meta, header: &[String], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut text = meta.csv_comment();
    text.push('\n');
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `body` as pretty JSON with a `meta` object added.
pub fn write_json(path: &Path, meta: &Meta, mut body: Map<String, Value>) -> Result<(), CliError> {
    body.insert("meta".into(), meta.json());
    let mut text = serde_json::to_string_pretty(&Value::Object(body)).expect("values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn prepare_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}
