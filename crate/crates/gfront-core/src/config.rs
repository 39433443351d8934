//! Experiment configuration: flat `key = value` text with dotted sections.
//!
//! Grammar (one entry per line):
//!
//! ```text
//! # comment
//! flow.kind = cellular
//! flow.amplitude = 2.0
//! solve.snapshot_times = 0.5, 1.0, 1.5
//! ```
//!
//! Keys are validated against the schema of the command being run: an
//! unknown key is a hard error naming the key (no silent typo tolerance).

use crate::flow::FlowSpec;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("key `{key}`: cannot parse `{value}` as {wanted}")]
    BadValue { key: String, value: String, wanted: &'static str },
    #[error("key `{0}`: {1}")]
    Invalid(String, String),
}

/// Parsed configuration: ordered key-value map.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(k) => &raw[..k],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(ln + 1))?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Every key must belong to `allowed`; the first stray key is reported.
    pub fn validate_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        Ok(())
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v.clone(),
                wanted: "a real number",
            }),
        }
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v.clone(),
                wanted: "an unsigned integer",
            }),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.u64(key, default as u64)? as usize)
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.into(),
                    value: v.clone(),
                    wanted: "a boolean",
                }),
            },
        }
    }

    pub fn str(&self, key: &str, default: &str) -> String {
        self.entries.get(key).cloned().unwrap_or_else(|| default.to_string())
    }

    pub fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| ConfigError::BadValue {
                        key: key.into(),
                        value: v.clone(),
                        wanted: "a comma-separated list of reals",
                    })
                })
                .collect(),
        }
    }

    /// The flow family described by the `flow.*` keys.
    pub fn flow_spec(&self) -> Result<FlowSpec, ConfigError> {
        let kind = self.str("flow.kind", "zero");
        match kind.as_str() {
            "zero" => Ok(FlowSpec::Zero),
            "constant" => Ok(FlowSpec::Constant {
                cx: self.f64("flow.cx", 0.0)?,
                cy: self.f64("flow.cy", 0.0)?,
            }),
            "cellular" => Ok(FlowSpec::Cellular {
                amplitude: self.f64("flow.amplitude", 1.0)?,
                period: self.f64("flow.period", 1.0)?,
                time_freq: self.f64("flow.time_freq", 0.0)?,
            }),
            "shear" => Ok(FlowSpec::Shear {
                amplitude: self.f64("flow.amplitude", 1.0)?,
                period: self.f64("flow.period", 1.0)?,
                time_freq: self.f64("flow.time_freq", 0.0)?,
            }),
            "bernoulli" => Ok(FlowSpec::Bernoulli { amplitude: self.f64("flow.amplitude", 0.05)? }),
            other => Err(ConfigError::Invalid(
                "flow.kind".into(),
                format!("unknown flow kind `{other}` (zero|constant|cellular|shear|bernoulli)"),
            )),
        }
    }

    /// Deterministic text rendering: sorted `key = value` lines. Used to echo
    /// the resolved configuration into the run directory.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Keys shared by every command.
pub const FLOW_KEYS: &[&str] =
    &["flow.kind", "flow.amplitude", "flow.period", "flow.time_freq", "flow.cx", "flow.cy", "flow.seed"];
