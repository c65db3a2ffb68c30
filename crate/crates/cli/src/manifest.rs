//! The record written next to every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sclf::sim::CSV_SCHEMA;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Problem file or solution archive the command read.
    pub input: PathBuf,
    pub degrees: Option<(u32, u32)>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// SHA-256 of the input bytes and the resolved options.
    pub config_hash: String,
    pub options: serde_json::Value,
    pub csv_schema: u32,
    pub floating_point: String,
}

impl RunManifest {
    pub fn new(command: &str, input: &Path, input_bytes: &[u8], options: serde_json::Value, output_dir: &Path) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(input_bytes);
        h.update([0]);
        h.update(serde_json::to_vec(&options).expect("options serialize"));
        let config_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        RunManifest {
            tool: "sclf".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            input: input.to_path_buf(),
            degrees: None,
            seeds: Vec::new(),
            output_dir: output_dir.to_path_buf(),
            config_hash,
            options,
            csv_schema: CSV_SCHEMA,
            floating_point: "IEEE-754 binary64, round to nearest; parallel results are gathered in a fixed order".into(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_inputs_and_options_only() {
        let a = RunManifest::new("solve", Path::new("a.json"), b"{}", serde_json::json!({"d": 2}), Path::new("o1"));
        let b = RunManifest::new("solve", Path::new("b.json"), b"{}", serde_json::json!({"d": 2}), Path::new("o2"));
        let c = RunManifest::new("solve", Path::new("a.json"), b"{}", serde_json::json!({"d": 4}), Path::new("o1"));
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
