//! Plain-text `key = value` files: configs, manifests and bundle headers.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys are
//! kept in sorted order so written files are byte-stable.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format("key-value file", format!("line {}: expected `key = value`", n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format("key-value file", format!("line {}: empty key", n + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::format("key-value file", format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(KeyValues(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path, self.render().as_bytes())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format("key-value file", format!("missing key `{key}`")))
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::format("key-value file", format!("`{key}`: cannot parse `{v}`"))
                })
            })
            .transpose()
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render() {
        let kv = KeyValues::parse("# c\n b = 2 \na=x y # tail\n\n").unwrap();
        assert_eq!(kv.get("a"), Some("x y"));
        assert_eq!(kv.parse_key::<u32>("b").unwrap(), Some(2));
        assert_eq!(kv.render(), "a = x y\nb = 2\n");
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }

    #[test]
    fn errors() {
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        assert!(KeyValues::parse("=1").is_err());
        let kv = KeyValues::parse("n = abc").unwrap();
        assert!(kv.parse_key::<u32>("n").is_err());
        assert!(kv.require("m").is_err());
    }
}
