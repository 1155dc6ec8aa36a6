//! Flat `key = value` configuration files.
//!
//! Keys are namespaced by a section prefix (`scene.arms`, `model.d`,
//! `train.lr`, `noise.endpoint_sigma`, `refine.delta`). Lines starting with
//! `#` and blank lines are ignored. Later assignments override earlier ones,
//! so command-line overrides are applied with [`KeyValues::set`] after
//! parsing the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
            }
            kv.set(key, v.trim());
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, v)| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, v.as_str()))
        })
    }

    /// Fails on any key whose section is not in `known`.
    pub fn check_sections(&self, known: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            let section = key.split('.').next().unwrap_or("");
            if !key.contains('.') || !known.contains(&section) {
                return Err(Error::Config(format!("unknown configuration key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// A configuration struct that can be populated from one section of a
/// [`KeyValues`] file.
pub trait Section: Default {
    const PREFIX: &'static str;

    fn set_key(&mut self, key: &str, value: &str) -> Result<()>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in kv.section(Self::PREFIX) {
            cfg.set_key(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

pub fn unknown_key(prefix: &str, key: &str) -> Error {
    Error::Config(format!("unknown configuration key `{prefix}.{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let kv = KeyValues::parse("# c\nscene.arms = 3\n\nmodel.d=16\n").unwrap();
        assert_eq!(kv.get("scene.arms"), Some("3"));
        let model: Vec<_> = kv.section("model").collect();
        assert_eq!(model, vec![("d", "16")]);
        assert!(kv.check_sections(&["scene", "model"]).is_ok());
        assert!(kv.check_sections(&["scene"]).is_err());
    }

    #[test]
    fn later_values_override() {
        let mut kv = KeyValues::parse("train.lr = 0.1").unwrap();
        kv.set("train.lr", 0.5);
        assert_eq!(kv.get("train.lr"), Some("0.5"));
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = KeyValues::parse("a.b = 1\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
