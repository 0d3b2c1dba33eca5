//! Machine-readable run artifacts. Every operation emits one JSON
//! report; trial-level data goes to CSV next to it. Reports are byte
//! reproducible from (config, seed): no timestamps, sorted maps, fixed
//! float formatting. Wall-clock timing goes to stderr only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub op: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub constants: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_from: Option<Vec<String>>,
}

impl Report {
    pub fn new(op: &str, config_hash: String, seed: u64, config: BTreeMap<String, String>) -> Self {
        Report {
            version: env!("CARGO_PKG_VERSION").to_string(),
            op: op.to_string(),
            config_hash,
            seed,
            config,
            constants: BTreeMap::new(),
            witness: None,
            merged_from: None,
        }
    }

    pub fn constant(&mut self, name: &str, value: f64) -> &mut Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)
            .with_context(|| format!("writing report {}", path.display()))?;
        Ok(path)
    }
}

pub fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = String::with_capacity(rows.len() * 64 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("writing csv {}", path.display()))?;
    Ok(path)
}

/// Max-merges the constants of reports produced by runs of the same
/// operation, so a sweep farmed over seeds reduces to one report.
pub fn merge(reports: &[Report]) -> Result<Report> {
    let Some(first) = reports.first() else {
        bail!("report-merge needs at least one input");
    };
    let mut merged = Report {
        version: first.version.clone(),
        op: first.op.clone(),
        config_hash: first.config_hash.clone(),
        seed: first.seed,
        config: first.config.clone(),
        constants: first.constants.clone(),
        witness: None,
        merged_from: Some(vec![first.config_hash.clone()]),
    };
    for r in &reports[1..] {
        if r.op != first.op {
            bail!("cannot merge op {:?} with {:?}", r.op, first.op);
        }
        if r.version != first.version {
            bail!("cannot merge version {:?} with {:?}", r.version, first.version);
        }
        let keys: Vec<&String> = r.constants.keys().collect();
        let first_keys: Vec<&String> = first.constants.keys().collect();
        if keys != first_keys {
            bail!(
                "constant keys differ: [{}] vs [{}]",
                keys.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                first_keys.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            );
        }
        for (k, v) in &r.constants {
            let slot = merged.constants.get_mut(k).expect("checked keys");
            *slot = slot.max(*v);
        }
        merged
            .merged_from
            .as_mut()
            .expect("set above")
            .push(r.config_hash.clone());
    }
    if merged.merged_from.as_ref().is_some_and(|v| v.len() < 2) {
        merged.merged_from = None;
    }
    Ok(merged)
}
