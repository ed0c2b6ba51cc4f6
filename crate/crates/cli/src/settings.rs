//! `key = value` configuration with flag overrides.
//!
//! Precedence is flags, then the config file, then built-in defaults. Every
//! value read is recorded so the manifest shows the full resolved
//! configuration.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    flags: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

/// Parses `key = value` lines; `#` starts a comment. Keys use the long flag
/// names (`iters`, `network-kind`, ...); underscores are accepted for dashes.
pub fn parse_config(text: &str, source: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("{source}:{}: empty key", i + 1)));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("{source}:{}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(map)
}

impl Settings {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                parse_config(&text, &path.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings {
            file,
            ..Default::default()
        })
    }

    pub fn from_maps(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        Settings {
            file,
            flags,
            ..Default::default()
        }
    }

    /// Records a command-line value for `key` (ignored when `None`).
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.flags.insert(key.to_string(), v.to_string());
        }
    }

    /// Records a boolean switch that was given on the command line.
    pub fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.flags.insert(key.to_string(), "true".into());
        }
    }

    fn raw(&self, key: &str) -> Option<&String> {
        self.flags.get(key).or_else(|| self.file.get(key))
    }

    fn parse<T: FromStr>(&self, key: &str, text: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        text.parse::<T>()
            .map_err(|e| CliError::Usage(format!("invalid value `{text}` for `{key}`: {e}")))
    }

    pub fn get<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let value = match self.raw(key) {
            Some(text) => self.parse(key, text)?,
            None => default,
        };
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt<T: FromStr + ToString>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            Some(text) => {
                let v: T = self.parse(key, text)?;
                self.resolved.borrow_mut().insert(key.to_string(), v.to_string());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn require<T: FromStr + ToString>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get_opt(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + ToString + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let values = match self.raw(key) {
            Some(text) => text
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| self.parse(key, s))
                .collect::<Result<Vec<T>, _>>()?,
            None => default.to_vec(),
        };
        let joined = values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.resolved.borrow_mut().insert(key.to_string(), joined);
        Ok(values)
    }

    /// The explicit seed, or a fresh one that is recorded as generated.
    pub fn seed(&self) -> Result<u64, CliError> {
        match self.get_opt::<u64>("seed")? {
            Some(s) => Ok(s),
            None => {
                let s: u64 = rand::random();
                let mut r = self.resolved.borrow_mut();
                r.insert("seed".into(), s.to_string());
                r.insert("seed-generated".into(), "true".into());
                Ok(s)
            }
        }
    }

    /// Fails on config-file keys that the command never read.
    pub fn check_unused(&self) -> Result<(), CliError> {
        let resolved = self.resolved.borrow();
        let unused: Vec<&String> = self.file.keys().filter(|k| !resolved.contains_key(*k)).collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "unknown config keys for this command: {}",
                unused.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let file = parse_config("k = 3\niters=100 # comment\nnetwork_kind = binary\n", "t").unwrap();
        let mut s = Settings::from_maps(file, BTreeMap::new());
        s.flag("k", Some(5));
        assert_eq!(s.get::<usize>("k", 1).unwrap(), 5);
        assert_eq!(s.get::<usize>("iters", 1).unwrap(), 100);
        assert_eq!(s.get::<usize>("thin", 10).unwrap(), 10);
        assert_eq!(s.get::<String>("network-kind", "x".into()).unwrap(), "binary");
        assert!(s.check_unused().is_ok());
        assert_eq!(s.resolved()["thin"], "10");
    }

    #[test]
    fn unknown_and_malformed() {
        assert!(parse_config("novalue\n", "t").is_err());
        assert!(parse_config("a=1\na=2\n", "t").is_err());
        let s = Settings::from_maps(parse_config("bogus = 1", "t").unwrap(), BTreeMap::new());
        assert!(s.check_unused().is_err());
        let s = Settings::from_maps(parse_config("k = x", "t").unwrap(), BTreeMap::new());
        assert!(s.get::<usize>("k", 1).is_err());
    }

    #[test]
    fn lists() {
        let s = Settings::from_maps(parse_config("intercepts = 0, -1,-2", "t").unwrap(), BTreeMap::new());
        assert_eq!(s.list::<f64>("intercepts", &[]).unwrap(), vec![0.0, -1.0, -2.0]);
    }
}
