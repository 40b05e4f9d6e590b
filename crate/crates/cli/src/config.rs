//! Run configuration: one TOML document, overridable per field from the
//! command line with `--key=value` (dotted keys reach into tables).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rule,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Falls back to `TRACE_LLM_URL`.
    pub url: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: usize,
    pub max_tokens: u32,
    pub cache: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Rule,
            url: None,
            model: "gpt-5-mini".into(),
            timeout_secs: 120,
            max_attempts: trace_core::reasoner::DEFAULT_MAX_ATTEMPTS,
            max_tokens: trace_core::reasoner::DEFAULT_MAX_TOKENS,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HomeConfig {
    pub id: String,
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    #[serde(default)]
    pub env_predictions: Option<PathBuf>,
    #[serde(default)]
    pub wear_predictions: Option<PathBuf>,
    #[serde(default)]
    pub prior: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Builtin map name (`aruba`, `milan`, `kyoto7`) or a TOML map file for the ground truth.
    #[serde(default)]
    pub label_map: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub folds: usize,
    pub test_days: i64,
    /// Derive the prior from each fold's training days when no prior file is given.
    pub derive_prior: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            test_days: 20,
            derive_prior: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub unit_seconds: f64,
    pub window_size: usize,
    pub stride: Option<usize>,
    pub history_windows: usize,
    /// Allowed labels; empty means take them from the prior.
    pub labels: Vec<String>,
    pub split_refinement: bool,
    pub out_of_home_minutes: i64,
    pub jobs: usize,
    pub backend: BackendConfig,
    pub split: Option<SplitConfig>,
    pub homes: Vec<HomeConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("trace-out"),
            unit_seconds: 60.0,
            window_size: 10,
            stride: None,
            history_windows: 2,
            labels: Vec::new(),
            split_refinement: false,
            out_of_home_minutes: 3,
            jobs: 1,
            backend: BackendConfig::default(),
            split: None,
            homes: Vec::new(),
        }
    }
}

/// TOML literal if it parses as one, else a plain string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets `key` (dotted, `-` read as `_`) in `table`, creating tables on the way.
pub fn apply_override(table: &mut Table, key: &str, raw: &str) -> CliResult<()> {
    let parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("bad override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(usage(format!("override {key:?}: {p} is not a table"))),
        };
    }
    cur.insert(last.clone(), parse_value(raw));
    Ok(())
}

/// Splits `--key=value` pairs off an argument list.
pub fn split_overrides(args: &[String]) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(a.clone()),
        }
    }
    (rest, overrides)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then the overrides. Relative paths in the
    /// file are taken from the file's directory.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<Table>()
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| usage(format!("config: {e}")))?;
        let base = file.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        for h in &mut cfg.homes {
            for p in [
                &mut h.events,
                &mut h.metadata,
                &mut h.env_predictions,
                &mut h.wear_predictions,
                &mut h.prior,
                &mut h.ground_truth,
            ] {
                resolve(&base, p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.homes.is_empty() {
            return Err(usage("config lists no homes"));
        }
        if self.unit_seconds.is_nan() || self.unit_seconds <= 0.0 {
            return Err(usage("unit_seconds must be positive"));
        }
        if self.window_size == 0 {
            return Err(usage("window_size must be positive"));
        }
        if let Some(s) = self.stride {
            if s == 0 || s > self.window_size {
                return Err(usage("stride must be in 1..=window_size"));
            }
        }
        if self.jobs == 0 {
            return Err(usage("jobs must be positive"));
        }
        if self.backend.max_attempts == 0 {
            return Err(usage("backend.max_attempts must be positive"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for h in &self.homes {
            if h.id.trim().is_empty() {
                return Err(usage("home without id"));
            }
            if !seen.insert(h.id.as_str()) {
                return Err(usage(format!("duplicate home id {:?}", h.id)));
            }
            if h.events.is_none() && h.env_predictions.is_none() && h.wear_predictions.is_none() {
                return Err(usage(format!("home {}: no events or predictions configured", h.id)));
            }
            if h.events.is_some() && h.metadata.is_none() {
                return Err(usage(format!("home {}: events given without metadata", h.id)));
            }
            let files = [
                ("events", &h.events),
                ("metadata", &h.metadata),
                ("env_predictions", &h.env_predictions),
                ("wear_predictions", &h.wear_predictions),
                ("prior", &h.prior),
                ("ground_truth", &h.ground_truth),
            ];
            for (name, p) in files {
                if let Some(p) = p {
                    if !p.is_file() {
                        return Err(usage(format!("home {}: {name} file {} not found", h.id, p.display())));
                    }
                }
            }
        }
        if let Some(s) = &self.split {
            if s.folds == 0 || s.test_days <= 0 {
                return Err(usage("split needs positive folds and test_days"));
            }
            if let Some(h) = self.homes.iter().find(|h| h.ground_truth.is_none()) {
                return Err(usage(format!("home {}: split requires ground_truth", h.id)));
            }
        }
        Ok(())
    }

    pub fn unit(&self) -> chrono::Duration {
        chrono::Duration::milliseconds((self.unit_seconds * 1000.0).round() as i64)
    }
}
