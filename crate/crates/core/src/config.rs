//! Flat key-value configuration text.
//!
//! Grammar: one `section.key = value` assignment per line, UTF-8, `#` starts
//! a comment that runs to the end of the line, blank lines are ignored. Keys
//! are dotted identifiers; values are the trimmed remainder of the line.
//! Assigning the same key twice is an error.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let valid = !key.is_empty()
                && key.split('.').all(|part| {
                    !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                });
            if !valid {
                return Err(Error::Config(format!("line {}: invalid key `{key}`", lineno + 1)));
            }
            if cfg.values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        v.parse().map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`")))
    }

    /// A `lo,hi` pair; a single number means `lo == hi`.
    pub fn get_range_or(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        let Some(v) = self.values.get(key) else {
            return Ok(default);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`")))
        };
        match parts.as_slice() {
            [one] => {
                let x = parse(one)?;
                Ok((x, x))
            }
            [lo, hi] => Ok((parse(lo)?, parse(hi)?)),
            _ => Err(Error::Config(format!("`{key}` expects `lo,hi`"))),
        }
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Config::echo`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        hex::encode(&digest[..8])
    }
}
