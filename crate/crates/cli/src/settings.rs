//! Layered option resolution: defaults < key=value config file < flags.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", n + 1)).into());
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings of one invocation, recorded for the run manifest.
pub struct Settings {
    file: HashMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => HashMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key}: {e}")).into()),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.used.insert(key.to_string());
        self.resolved.insert(key.to_string(), value);
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| UsageError(format!("--{key} is required")).into())
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let p = match flag {
            Some(p) => Some(p),
            None => self.from_file::<String>(key)?.map(PathBuf::from),
        };
        let p = p.ok_or_else(|| UsageError(format!("--{key} is required")))?;
        self.record(key, p.display().to_string());
        Ok(p)
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let p = match flag {
            Some(p) => Some(p),
            None => self.from_file::<String>(key)?.map(PathBuf::from),
        };
        if let Some(p) = &p {
            self.record(key, p.display().to_string());
        }
        Ok(p)
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + Display>(&mut self, key: &str, flag: Option<String>, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let text = match flag {
            Some(s) => Some(s),
            None => self.from_file::<String>(key)?,
        };
        let values = match text {
            None => default,
            Some(s) => parse_list(key, &s)?,
        };
        let shown: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.record(key, shown.join(","));
        Ok(values)
    }

    pub fn flag(&mut self, key: &str, set: bool) -> Result<bool> {
        let v = set || self.from_file::<bool>(key)?.unwrap_or(false);
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn note(&mut self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    /// Config-file keys this subcommand never asked for.
    pub fn unused(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.file.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        keys.sort();
        keys
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

pub fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|e| UsageError(format!("--{key} value {p:?}: {e}")).into()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_syntax() {
        let c = parse_config("# comment\nepochs = 5\n\nlr=0.01 # trailing\nmax_steps = 3\n").unwrap();
        assert_eq!(c["epochs"], "5");
        assert_eq!(c["lr"], "0.01");
        assert_eq!(c["max-steps"], "3");
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn precedence() {
        let mut s = Settings {
            file: parse_config("epochs = 5\nlr = 0.5").unwrap(),
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        };
        assert_eq!(s.get("epochs", None, 100usize).unwrap(), 5);
        assert_eq!(s.get("lr", Some(0.1), 1.0).unwrap(), 0.1);
        assert_eq!(s.get("tau", None, 0.5).unwrap(), 0.5);
        assert_eq!(s.resolved()["lr"], "0.1");
        assert!(s.unused().is_empty());
        assert!(s.get::<usize>("missing", None, 1).is_ok());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<i8>("snrs", "-2, 0,4").unwrap(), vec![-2, 0, 4]);
        assert!(parse_list::<usize>("n", "1,x").is_err());
    }
}
