//! Effective settings: command-line flags over a key = value file over defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", no + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {key}", no + 1)));
        }
    }
    Ok(out)
}

#[derive(Debug, Default, Clone)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self { file, ..Self::default() }
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Ok(Self::new(parse_kv(&text)?))
            }
        }
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key {key} = {raw:?}: {e}"))),
        }
    }

    /// Flag, else file entry, else default; the result is recorded in the effective config.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// As [`Settings::get`] without a default; absent values are not recorded.
    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file);
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.effective
    }

    /// File keys never consulted by the command.
    pub fn unused(&self) -> Vec<String> {
        self.file.keys().filter(|k| !self.used.contains(*k)).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let mut s = Settings::new(parse_kv("eta = 0.8\n# comment\nnr=32 # trailing\nsearch_tol = 1e-7\nextra = 1").unwrap());
        assert_eq!(s.get("eta", Some(0.9), 0.5).unwrap(), 0.9);
        assert_eq!(s.get("nr", None, 64usize).unwrap(), 32);
        assert_eq!(s.get("search-tol", None, 1e-6).unwrap(), 1e-7);
        assert_eq!(s.get("mu", None, 0.0).unwrap(), 0.0);
        assert_eq!(s.get_opt::<f64>("beta1", None).unwrap(), None);
        assert_eq!(s.effective().get("eta").unwrap(), "0.9");
        assert_eq!(s.effective().get("mu").unwrap(), "0");
        assert!(!s.effective().contains_key("beta1"));
        assert_eq!(s.unused(), vec!["extra".to_string()]);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(parse_kv("eta 0.9"), Err(CliError::Config(_))));
        assert!(matches!(parse_kv("eta = 1\neta = 2"), Err(CliError::Config(_))));
        let mut s = Settings::new(parse_kv("nr = many").unwrap());
        assert!(matches!(s.get("nr", None, 64usize), Err(CliError::Config(_))));
    }
}
