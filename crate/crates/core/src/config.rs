//! Flat `key=value` configuration files.
//!
//! Keys carry a section prefix (`model.embed_dim`, `train.seed`). Lines
//! starting with `#` and blank lines are ignored. Rendering sorts keys so an
//! echoed config is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::{files, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&files::read_to_string(path)?, path)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write(path, self.render())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` when present, otherwise returns `default`.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")))
    }

    /// Entries of `other` override entries of `self`.
    pub fn merged(&self, other: &Config) -> Config {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.clone());
        Config { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let text = "# comment\nmodel.embed_dim = 32\n\ntrain.seed=7\n";
        let c = Config::parse(text, Path::new("x.cfg")).unwrap();
        assert_eq!(c.require::<usize>("model.embed_dim").unwrap(), 32);
        assert_eq!(c.get_or("train.max_steps", 10usize).unwrap(), 10);
        let again = Config::parse(&c.render(), Path::new("y.cfg")).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.render(), "model.embed_dim=32\ntrain.seed=7\n");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = Config::parse("a=1\nnonsense\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.to_string().contains("c.cfg:2"), "{err}");
    }

    #[test]
    fn override_wins() {
        let mut a = Config::new();
        a.set("k", 1);
        a.set("j", 2);
        let mut b = Config::new();
        b.set("k", 3);
        let m = a.merged(&b);
        assert_eq!(m.get_str("k"), Some("3"));
        assert_eq!(m.get_str("j"), Some("2"));
    }
}
