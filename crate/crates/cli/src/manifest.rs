//! Run manifests: what was run, on which inputs, with which settings.
//!
//! A manifest holds no timestamps, host names or thread counts, so the same
//! inputs, flags and seed always produce the same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "morphproj";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: Value::Null,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    pub fn count(&mut self, name: &str, value: impl Into<Value>) {
        self.counters.insert(name.to_string(), value.into());
    }

    pub fn record_input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(bytes)),
                bytes: bytes.len() as u64,
            },
        );
    }

    /// Read a UTF-8 input file and record its digest under `role`.
    pub fn read(&mut self, role: &str, path: &Path) -> anyhow::Result<String> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {role} file {}", path.display()))?;
        self.record_input(role, path, &bytes);
        String::from_utf8(bytes).with_context(|| format!("{role} file {} is not UTF-8", path.display()))
    }

    /// Write an output file and note it under `role`.
    pub fn write(&mut self, role: &str, path: &Path, contents: &str) -> anyhow::Result<()> {
        std::fs::write(path, contents).with_context(|| format!("writing {role} file {}", path.display()))?;
        self.outputs.insert(role.to_string(), path.display().to_string());
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }
}

/// Default manifest location for a run whose main output is `primary`.
pub fn default_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_sha256() {
        let mut m = RunManifest::new("align");
        m.record_input("bitext", Path::new("b.txt"), b"abc");
        assert_eq!(
            m.inputs["bitext"].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn default_path_sits_next_to_output() {
        assert_eq!(default_path(Path::new("out/model.json")), PathBuf::from("out/model.json.manifest.json"));
    }

    #[test]
    fn no_volatile_fields() {
        let json = RunManifest::new("tag").to_json();
        for word in ["time", "date", "host", "thread"] {
            assert!(!json.contains(word), "{json}");
        }
    }
}
