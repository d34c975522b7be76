//! Flat `[section] key = value` run-configuration files.
//!
//! The format is intentionally small: `#` starts a comment anywhere on a
//! line, section names come from a fixed vocabulary, and every key inside a
//! section the command reads must be recognized. Sections a command does not
//! read are left alone, so one file can drive several subcommands.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::CliError;

const KNOWN_SECTIONS: [&str; 6] = [
    "problem",
    "sampling",
    "interpolation",
    "optimizer",
    "aeroelastic",
    "output",
];

/// Parsed configuration plus the raw bytes that feed the provenance hash.
#[derive(Debug)]
pub struct RunConfig {
    path: PathBuf,
    bytes: Vec<u8>,
    sections: BTreeMap<String, BTreeMap<String, String>>,
    consumed: RefCell<BTreeSet<(String, String)>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = crate::read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| {
            CliError::Config(format!("{}: configuration is not UTF-8 text", path.display()))
        })?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("{}:{}: {msg}", path.display(), idx + 1));
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner
                    .strip_suffix(']')
                    .ok_or_else(|| at("section header is missing the closing `]`".into()))?
                    .trim()
                    .to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(at(format!(
                        "unknown section [{name}] (known: {})",
                        KNOWN_SECTIONS.join(", ")
                    )));
                }
                if sections.contains_key(&name) {
                    return Err(at(format!("section [{name}] appears twice")));
                }
                sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(at("empty key".into()));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| at(format!("key `{key}` appears before any [section]")))?;
            let map = sections.get_mut(section).expect("section was inserted");
            if map.insert(key.clone(), value).is_some() {
                return Err(at(format!("duplicate key `{key}` in [{section}]")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            bytes,
            sections,
            consumed: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Directory the file lives in; relative paths inside the file resolve
    /// against it so configurations stay relocatable.
    pub fn dir(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }

    pub fn resolve(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir().join(p)
        }
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&str> {
        let v = self.sections.get(section)?.get(key)?;
        self.consumed
            .borrow_mut()
            .insert((section.to_string(), key.to_string()));
        Some(v.as_str())
    }

    /// Marks a key consumed without using it (for keys that belong to a
    /// sibling subcommand sharing the same section).
    pub fn ignore(&self, section: &str, key: &str) {
        let _ = self.lookup(section, key);
    }

    fn missing(&self, section: &str, key: &str) -> CliError {
        CliError::Config(format!(
            "{}: missing required key `{key}` in [{section}]",
            self.path.display()
        ))
    }

    fn bad_value(&self, section: &str, key: &str, value: &str, want: &str) -> CliError {
        CliError::Config(format!(
            "{}: [{section}] {key}: expected {want}, got `{value}`",
            self.path.display()
        ))
    }

    pub fn str_opt(&self, section: &str, key: &str) -> Option<&str> {
        self.lookup(section, key)
    }

    pub fn str_req(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.lookup(section, key)
            .ok_or_else(|| self.missing(section, key))
    }

    pub fn f64_opt(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.bad_value(section, key, v, "a number")),
        }
    }

    pub fn f64_req(&self, section: &str, key: &str) -> Result<f64, CliError> {
        self.f64_opt(section, key)?
            .ok_or_else(|| self.missing(section, key))
    }

    pub fn u64_opt(&self, section: &str, key: &str) -> Result<Option<u64>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| self.bad_value(section, key, v, "a non-negative integer")),
        }
    }

    pub fn u64_req(&self, section: &str, key: &str) -> Result<u64, CliError> {
        self.u64_opt(section, key)?
            .ok_or_else(|| self.missing(section, key))
    }

    pub fn usize_opt(&self, section: &str, key: &str) -> Result<Option<usize>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| self.bad_value(section, key, v, "a non-negative integer")),
        }
    }

    pub fn usize_req(&self, section: &str, key: &str) -> Result<usize, CliError> {
        self.usize_opt(section, key)?
            .ok_or_else(|| self.missing(section, key))
    }

    /// Whitespace-separated list of numbers.
    pub fn f64_list_req(&self, section: &str, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.str_req(section, key)?.to_string();
        let mut out = Vec::new();
        for tok in raw.split_whitespace() {
            out.push(
                tok.parse::<f64>()
                    .map_err(|_| self.bad_value(section, key, &raw, "numbers separated by spaces"))?,
            );
        }
        if out.is_empty() {
            return Err(self.bad_value(section, key, &raw, "at least one number"));
        }
        Ok(out)
    }

    /// Whitespace-separated list of words.
    pub fn str_list_req(&self, section: &str, key: &str) -> Result<Vec<String>, CliError> {
        let raw = self.str_req(section, key)?;
        let out: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
        if out.is_empty() {
            return Err(self.bad_value(section, key, raw, "at least one word"));
        }
        Ok(out)
    }

    /// Rejects unread keys inside the sections this command owns; other
    /// sections may carry settings for sibling subcommands.
    pub fn finish(&self, owned: &[&str]) -> Result<(), CliError> {
        let consumed = self.consumed.borrow();
        let mut unknown = Vec::new();
        for &section in owned {
            if let Some(map) = self.sections.get(section) {
                for key in map.keys() {
                    if !consumed.contains(&(section.to_string(), key.clone())) {
                        unknown.push(format!("[{section}] {key}"));
                    }
                }
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{}: unknown keys: {}",
                self.path.display(),
                unknown.join(", ")
            )))
        }
    }
}

/// Hex SHA-256 over the concatenated byte blocks; written as a
/// `# config-hash:` comment so outputs carry their provenance.
pub fn config_hash(parts: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}
