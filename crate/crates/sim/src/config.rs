//! Flat `key = value` experiment configs. Unknown keys are an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate key {0:?}")]
    Duplicate(String),
    #[error("unknown key {0:?}")]
    Unknown(String),
    #[error("bad value for {key:?}: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Io(String),
}

/// Parsed pairs; `take_*` consumes a key so leftovers can be reported.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    pairs: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if pairs.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
        }
        Ok(KvConfig { pairs })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds a config from `key=value` command-line overrides.
    pub fn from_pairs<'a>(items: impl IntoIterator<Item = (&'a str, String)>) -> Self {
        KvConfig { pairs: items.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    /// Later values win.
    pub fn merge(&mut self, other: KvConfig) {
        self.pairs.extend(other.pairs);
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.pairs.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), message: e.to_string() }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.pairs.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), message: e.to_string() }))
                .collect(),
        }
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.pairs.into_keys().next() {
            Some(k) => Err(ConfigError::Unknown(k)),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_take() {
        let mut c = KvConfig::parse("# gossip\nnodes = 50\nsizes = 5, 10,20\n\nseed=3 # inline\n").unwrap();
        assert_eq!(c.take::<usize>("nodes").unwrap(), Some(50));
        assert_eq!(c.take_list::<usize>("sizes", vec![]).unwrap(), vec![5, 10, 20]);
        assert_eq!(c.take_or::<u64>("seed", 0).unwrap(), 3);
        assert_eq!(c.take_or::<u64>("trials", 9).unwrap(), 9);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let c = KvConfig::parse("nodes = 5\ncolour = red\n").unwrap();
        let mut c2 = c.clone();
        c2.take::<usize>("nodes").unwrap();
        assert_eq!(c2.finish(), Err(ConfigError::Unknown("colour".into())));
        assert!(matches!(KvConfig::parse("nodes 5"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(KvConfig::parse("a=1\na=2"), Err(ConfigError::Duplicate(_))));
        let mut c3 = KvConfig::parse("nodes = many").unwrap();
        assert!(matches!(c3.take::<usize>("nodes"), Err(ConfigError::Value { .. })));
    }
}
