//! Run manifest: a small JSON record written next to the outputs of every
//! invocation so a run can be audited and repeated from its artifacts alone.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Binary name, fixed.
    pub tool: &'static str,
    /// Crate version the binary was built from.
    pub version: &'static str,
    /// Subcommand that produced the outputs.
    pub command: String,
    /// Master seed all per-drop substreams fan out from.
    pub seed: u64,
    /// RFC 3339 start and end times of the run.
    pub started: String,
    pub finished: String,
    /// Fully resolved flat configuration, echoing the file keys.
    pub config: serde_json::Value,
    /// File names written into the output directory, manifest excluded.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: "pilot-selflearn",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            started: now_rfc3339(),
            finished: String::new(),
            config,
            outputs: Vec::new(),
        }
    }

    /// Stamps the end time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        self.finished = now_rfc3339();
        let path = dir.join(MANIFEST_NAME);
        let mut text =
            serde_json::to_string_pretty(&self).expect("manifest serialization is infallible");
        text.push('\n');
        fs::write(&path, text).map_err(|source| CliError::WriteOutput { path, source })?;
        Ok(())
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_serializes_every_required_field() {
        let mut manifest = RunManifest::new("scenario", 42, serde_json::json!({"drops": 5}));
        manifest.outputs.push("scenario.csv".to_string());
        manifest.finished = now_rfc3339();
        let value: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&manifest).unwrap()).unwrap();
        for key in [
            "tool", "version", "command", "seed", "started", "finished", "config", "outputs",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["seed"], 42);
        assert_eq!(value["outputs"][0], "scenario.csv");
    }

    #[test]
    fn timestamps_parse_back_as_rfc3339() {
        let stamp = now_rfc3339();
        assert!(chrono::DateTime::parse_from_rfc3339(&stamp).is_ok());
    }
}
