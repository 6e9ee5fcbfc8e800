//! Run manifests: everything needed to repeat a run and check that it
//! produced the same bytes.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub core_version: String,
    pub subcommand: String,
    pub seed: u64,
    /// Fully resolved parameters.
    pub config: Value,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: BTreeMap<String, FileRecord>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

fn records(files: &BTreeMap<String, PathBuf>) -> Result<BTreeMap<String, FileRecord>> {
    files.iter().map(|(k, p)| Ok((k.clone(), FileRecord { path: p.clone(), sha256: sha256_file(p)? }))).collect()
}

impl Manifest {
    pub fn new(
        subcommand: &str,
        seed: u64,
        config: Value,
        inputs: &BTreeMap<String, PathBuf>,
        outputs: &BTreeMap<String, PathBuf>,
    ) -> Result<Self> {
        Ok(Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: bouncekit::VERSION.to_string(),
            subcommand: subcommand.to_string(),
            seed,
            config_sha256: sha256_bytes(&serde_json::to_vec(&config)?),
            config,
            inputs: records(inputs)?,
            outputs: records(outputs)?,
        })
    }

    /// Where the manifest of a run whose main output is `out` lives.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(Manifest::path_for(Path::new("out/a.csv")), PathBuf::from("out/a.csv.manifest.json"));
    }
}
