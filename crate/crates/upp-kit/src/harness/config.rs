//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comment
//! topology.kind = ring
//! topology.n = 50
//! algorithm.name = UPP_SC_OPT
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Result, UppError};

/// Parsed key-value pairs. Every key must be consumed through the typed
/// getters; [`FlatConfig::finish`] reports the ones nobody asked for.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UppError::Parse(format!("line {}: expected key = value", no + 1)))?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(UppError::Parse(format!("line {}: bad key {key:?}", no + 1)));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(UppError::Parse(format!("line {}: duplicate key {key}", no + 1)));
            }
        }
        Ok(FlatConfig { entries, used: Default::default() })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| UppError::Config(format!("{key} = {v:?} has the wrong type"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| UppError::Config(format!("missing {key}")))
    }

    /// Keys under `prefix.` that have not been read yet.
    pub fn unread_with_prefix(&self, prefix: &str) -> Vec<String> {
        let used = self.used.borrow();
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix) && !used.contains(*k))
            .cloned()
            .collect()
    }

    pub fn finish(&self) -> Result<()> {
        let left = self.unread_with_prefix("");
        if left.is_empty() {
            Ok(())
        } else {
            Err(UppError::Config(format!("unknown keys: {}", left.join(", "))))
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
