//! Flat `key=value` text records with `#` comments.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Later duplicates overwrite earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: IndexMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            map.set(k, v.trim());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copies every entry of `other` over this map.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Parses `key` if present.
    pub fn parsed<V>(&self, key: &str) -> Result<Option<V>>
    where
        V: FromStr,
        V::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<V>()
                    .map_err(|e| Error::Config(format!("bad value for '{key}': '{v}' ({e})")))
            })
            .transpose()
    }

    pub fn require<V>(&self, key: &str) -> Result<V>
    where
        V: FromStr,
        V::Err: Display,
    {
        self.parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    /// Parses `key` or falls back to `default`.
    pub fn or<V>(&self, key: &str, default: V) -> Result<V>
    where
        V: FromStr,
        V::Err: Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list<V>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V: FromStr,
        V::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|p| {
                        p.trim().parse::<V>().map_err(|e| {
                            Error::Config(format!("bad list item for '{key}': '{p}' ({e})"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails on keys outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Comma-joins a list for a `KvMap` value.
pub fn join<V: Display>(items: &[V]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_blanks() {
        let m = KvMap::parse("# header\n a = 1 \n\nb=x y # trailing\n").unwrap();
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(m.get("b"), Some("x y"));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn round_trip_text() {
        let mut m = KvMap::new();
        m.set("depths", join(&[2, 2, 9, 2]));
        m.set("lr", 5e-5);
        let back = KvMap::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.list::<usize>("depths").unwrap(),
            Some(vec![2, 2, 9, 2])
        );
        assert_eq!(back.require::<f64>("lr").unwrap(), 5e-5);
    }

    #[test]
    fn errors_are_config_errors() {
        assert!(matches!(KvMap::parse("novalue"), Err(Error::Config(_))));
        let m = KvMap::parse("n=abc").unwrap();
        assert!(matches!(m.require::<usize>("n"), Err(Error::Config(_))));
        assert!(matches!(
            m.require::<usize>("missing"),
            Err(Error::Config(_))
        ));
        assert!(m.reject_unknown(&["m"]).is_err());
    }
}
