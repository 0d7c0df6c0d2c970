//! `key=value` run files. Keys mirror the long flag names of `wlra run`.

use std::collections::BTreeMap;
use std::path::Path;

pub const KEYS: [&str; 16] = [
    "name",
    "algorithm",
    "k",
    "lambda",
    "bigK",
    "schedule-offset",
    "iota",
    "alpha-bar",
    "beta",
    "seed",
    "iters",
    "seconds",
    "trace-every",
    "out",
    "phi",
    "frozen-clock",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", idx + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(format!("line {}: unknown key \"{k}\"", idx + 1));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(format!("line {}: key \"{k}\" repeated", idx + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value for `key`; errors name the key as a flag.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        self.raw(key).map(|v| v.parse::<T>().map_err(|_| format!("invalid value \"{v}\" for --{key} in config file"))).transpose()
    }
}
