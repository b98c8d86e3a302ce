//! JSON report document shared by every command.

use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Toolkit {
    pub name: &'static str,
    pub version: &'static str,
}

pub const TOOLKIT: Toolkit = Toolkit { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") };

/// Result tree plus provenance. Timings are only attached on request, so that repeated
/// invocations stay byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub toolkit: Toolkit,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub result: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl ReportDocument {
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes to `path`, or to stdout when absent.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}
