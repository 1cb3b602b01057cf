//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the same
//! spelling as the long command-line options (`lr-main`, `batch-size`,
//! ...); underscores are accepted and normalized to dashes.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    path: std::path::PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(err(format!("duplicate key {key}")));
            }
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses the value under `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("{key}: {e}"),
            }),
        }
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    msg: format!("unknown key {k}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes() {
        let c = ConfigFile::parse(Path::new("x"), "# c\nlr_main = 0.01\n\nseed=3\n").unwrap();
        assert_eq!(c.get::<f64>("lr-main").unwrap(), Some(0.01));
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(3));
        assert_eq!(c.get::<u64>("batch-size").unwrap(), None);
    }

    #[test]
    fn errors_carry_lines() {
        let e = ConfigFile::parse(Path::new("x"), "a = 1\nnonsense\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let c = ConfigFile::parse(Path::new("x"), "\nseed = many\n").unwrap();
        assert!(matches!(c.get::<u64>("seed"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(c.check_keys(&["lr"]), Err(Error::Parse { line: 2, .. })));
        assert!(ConfigFile::parse(Path::new("x"), "a=1\na=2").is_err());
    }
}
