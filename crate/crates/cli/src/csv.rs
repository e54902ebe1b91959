//! Minimal CSV emission with config-hash and seed header lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// 17 significant digits: round-trips every `f64`.
pub fn num(value: f64) -> String {
    format!("{value:.16e}")
}

pub struct Table {
    text: String,
    width: usize,
}

impl Table {
    pub fn new(config_hash: &str, seed: u64, columns: &[&str]) -> Self {
        let mut text = String::new();
        writeln!(text, "# config_hash: {config_hash}").unwrap();
        writeln!(text, "# seed: {seed}").unwrap();
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text, width: columns.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        debug_assert_eq!(fields.len(), self.width);
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, self.text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Columns of a CSV written by [`Table`], keyed by header name.
pub fn read_columns(path: &Path) -> CliResult<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::Config(format!("{}: empty CSV", path.display())))?;
    let mut columns: Vec<(String, Vec<f64>)> = header.split(',').map(|h| (h.trim().to_string(), Vec::new())).collect();
    for (number, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(CliError::Config(format!("{}: row {} has {} fields", path.display(), number + 1, fields.len())));
        }
        for (column, field) in columns.iter_mut().zip(fields) {
            let value = field
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{}: `{field}` is not a number", path.display())))?;
            column.1.push(value);
        }
    }
    Ok(columns)
}
