//! `key = value` run files. Keys are the long flag names without dashes
//! (`x-limit`, `min-size`, ...); `_` and `-` are interchangeable. Flags given
//! on the command line take precedence over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    origin: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        cfg.origin = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            let key = normalize(k);
            if key.is_empty() {
                bail!("line {}: empty key", n + 1);
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key `{key}`", n + 1);
            }
        }
        Ok(Self { origin: None, values })
    }

    /// Reject keys outside `allowed`, naming the offender.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                bail!("{}unknown key `{key}`", self.origin_prefix());
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("{}bad value for `{key}`: {e}", self.origin_prefix()))
            })
            .transpose()
    }

    /// Flag value if given, otherwise the file's.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn origin_prefix(&self) -> String {
        self.origin
            .as_ref()
            .map(|p| format!("{}: ", p.display()))
            .unwrap_or_default()
    }
}
