//! Flat key-value experiment configs. One `key = value` per line, `#`
//! comments, dotted keys for per-operation namespaces. The canonical
//! serialization (sorted keys) feeds the report hash, so identical
//! configs always produce identical reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct Config {
    map: BTreeMap<String, String>,
    touched: Mutex<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {line:?}", i + 1);
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if map.insert(key.clone(), value).is_some() {
                bail!("line {}: duplicate key {key:?}", i + 1);
            }
        }
        Ok(Config {
            map,
            touched: Mutex::new(BTreeSet::new()),
        })
    }

    /// Overrides one key, e.g. a `--seed` flag taking precedence over
    /// the file.
    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.touched.lock().unwrap().insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse().with_context(|| format!("key {key:?}: bad number {v:?}")))
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key)
            .map(|v| v.parse().with_context(|| format!("key {key:?}: bad count {v:?}")))
            .transpose()
            .map(|o| o.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key)
            .map(|v| v.parse().with_context(|| format!("key {key:?}: bad integer {v:?}")))
            .transpose()
            .map(|o| o.unwrap_or(default))
    }

    /// Comma-separated floats.
    pub fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .with_context(|| format!("key {key:?}: bad number {s:?}"))
                })
                .collect(),
        }
    }

    /// Errors on keys that no getter asked about; catches typos before a
    /// long run silently ignores them.
    pub fn reject_unknown(&self) -> Result<()> {
        let touched = self.touched.lock().unwrap();
        let unknown: Vec<&str> = self
            .map
            .keys()
            .filter(|k| !touched.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            bail!("unknown config keys: {}", unknown.join(", "))
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}
