//! Flat `key=value` configuration with layered precedence.
//!
//! Every command starts from a table of defaults, overlays an optional
//! config file, then command-line flags. Only keys present in the defaults
//! are accepted; anything else is a usage error. The fully resolved table is
//! snapshotted next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_text(text: &str, origin: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value, found '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn with_defaults<K: Into<String>, V: Into<String>>(defaults: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            values: defaults.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn from_map(values: BTreeMap<String, String>) -> Self {
        Self { values }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(CliError::Usage(format!(
                "unknown setting '{key}' (known: {})",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Overwrites a value, adding the key if needed. For values derived by
    /// the command itself.
    pub fn force(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn merge_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (k, v) in parse_kv_text(&text, &path.display().to_string())? {
            self.set(&k, v)?;
        }
        Ok(())
    }

    /// Applies `key=value` strings given on the command line.
    pub fn merge_assignments(&mut self, assignments: &[String]) -> CliResult<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, found '{a}'")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies flags that were actually given.
    pub fn merge_flags(&mut self, flags: &[(&str, Option<String>)]) -> CliResult<()> {
        for (k, v) in flags {
            if let Some(v) = v {
                self.set(k, v.clone())?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> CliResult<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Usage(format!("missing setting '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| CliError::Usage(format!("invalid value '{raw}' for '{key}'")))
    }

    /// A path-valued setting that must be present.
    pub fn path(&self, key: &str) -> CliResult<PathBuf> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Err(CliError::Usage(format!("'{key}' is required")));
        }
        Ok(PathBuf::from(raw))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let raw = self.raw(key)?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid list entry '{v}' for '{key}'")))
            })
            .collect()
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// One `key=value` per line, sorted by key.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Resolves a user-supplied path to an absolute one so snapshots stay valid
/// from any working directory.
pub fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}
