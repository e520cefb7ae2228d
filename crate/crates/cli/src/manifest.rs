//! Line-oriented `key=value` run manifests written next to every output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub struct RunManifest {
    entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, settings: &BTreeMap<String, String>) -> Self {
        let mut entries = BTreeMap::new();
        for (k, v) in settings {
            entries.insert(format!("option.{k}"), v.clone());
        }
        entries.insert("subcommand".into(), subcommand.into());
        entries.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        Self { entries }
    }

    /// Records an input file with its checksum.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.entries.insert(format!("input.{name}"), path.display().to_string());
        self.entries.insert(format!("input.{name}.sha256"), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.entries.insert(format!("output.{name}"), path.display().to_string());
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<path>.<suffix>`, keeping the original extension.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
