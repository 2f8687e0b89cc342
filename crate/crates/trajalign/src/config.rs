//! Key-value configuration files shared by the training driver and the
//! orchestrator.
//!
//! Format: one `key = value` per line, `#` starts a comment, blank lines
//! ignored. Unknown keys are preserved so one file can configure several
//! components.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("key {key}: {message}")]
    BadValue { key: String, message: String },
}

/// Parsed key-value configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<KvConfig, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            entries.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        Ok(KvConfig { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<KvConfig, ConfigError> {
        KvConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_owned(),
                message: format!("cannot parse {raw:?}"),
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.entries.get(key).cloned().unwrap_or_else(|| default.to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_basic_file() {
        let cfg = KvConfig::parse("# training\nbeta = 0.1\nsteps=300\n\nname = run one\n").unwrap();
        assert_eq!(cfg.f64_or("beta", 0.5).unwrap(), 0.1);
        assert_eq!(cfg.usize_or("steps", 0).unwrap(), 300);
        assert_eq!(cfg.str_or("name", ""), "run one");
        assert_eq!(cfg.f64_or("missing", 2.5).unwrap(), 2.5);
    }

    #[test]
    fn parse_rejects_bad_lines_and_values() {
        assert!(KvConfig::parse("just words\n").is_err());
        let cfg = KvConfig::parse("steps = many\n").unwrap();
        assert!(cfg.usize_or("steps", 0).is_err());
    }

    #[test]
    fn comments_and_inline_comments() {
        let cfg = KvConfig::parse("alpha1 = 0.5 # balanced\n# full line\nalpha2 = 0.5\n").unwrap();
        assert_eq!(cfg.f64_or("alpha1", 0.0).unwrap(), 0.5);
        assert_eq!(cfg.f64_or("alpha2", 0.0).unwrap(), 0.5);
    }
}
