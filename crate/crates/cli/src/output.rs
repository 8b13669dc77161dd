//! Run manifests and reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// A result in two renderings: structured JSON and an aligned table.
pub struct Report {
    pub json: Value,
    pub table: String,
}

impl Report {
    pub fn new(json: Value, table: String) -> Self {
        Self { json, table }
    }

    /// Two-column `key value` table.
    pub fn pairs(json: Value, rows: &[(&str, String)]) -> Self {
        Self::new(json, table(&["key", "value"], rows.iter().map(|(k, v)| vec![k.to_string(), v.clone()])))
    }
}

/// Left-aligned first column, right-aligned others.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let rows: Vec<Vec<String>> = rows.into_iter().collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let render = |cells: &mut dyn Iterator<Item = &str>| -> String {
        cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![render(&mut header.iter().copied())];
    out.push(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    for row in &rows {
        out.push(render(&mut row.iter().map(String::as_str)));
    }
    out.join("\n")
}

#[derive(Serialize)]
struct FileEntry {
    path: PathBuf,
    bytes: Option<u64>,
}

fn entry(path: &Path) -> FileEntry {
    FileEntry {
        path: path.to_path_buf(),
        bytes: fs::metadata(path).ok().map(|m| m.len()),
    }
}

/// Bookkeeping for one subcommand run; written next to its artifacts.
pub struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: serde_json::Map<String, Value>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), json!(value));
    }

    /// Writes `<command>.manifest.json` and `<command>.report.json` into `dir`.
    pub fn finish(mut self, dir: &Path, config: &RunConfig, report: &Report) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let report_path = dir.join(format!("{}.report.json", self.command));
        write_json(&report_path, &report.json)?;
        self.outputs.push(report_path);
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": rayon::current_num_threads(),
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
            "seeds": self.seeds,
            "inputs": self.inputs.iter().map(|p| entry(p)).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|p| entry(p)).collect::<Vec<_>>(),
            "config": config,
        });
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
