//! Flat `key = value` text documents used by every config file.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := ws* '#' any*
//! entry   := ws* key ws* '=' ws* value ws*
//! key     := [A-Za-z0-9_.-]+
//! value   := any* (trimmed; may be empty)
//! ```
//!
//! Keys are case-sensitive and may appear at most once.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {message}")]
    Value {
        key: String,
        value: String,
        message: String,
    },
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

/// Parsed document, keys in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    entries: BTreeMap<String, String>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| KvError::Syntax {
                line,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
            {
                return Err(KvError::Syntax {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    /// Parses `key` when present.
    pub fn parse_value<T>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| KvError::Value {
                key: key.to_string(),
                value: v.to_string(),
                message: e.to_string(),
            }),
        }
    }

    /// Fails on the first key not listed in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), KvError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(KvError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let doc = KvDocument::parse("# header\n\n  a.b = 1.5 \nname=  x y \nempty =\n").unwrap();
        assert_eq!(doc.get("a.b"), Some("1.5"));
        assert_eq!(doc.get("name"), Some("x y"));
        assert_eq!(doc.get("empty"), Some(""));
        assert_eq!(doc.parse_value::<f64>("a.b").unwrap(), Some(1.5));
        assert_eq!(doc.parse_value::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(KvDocument::parse("novalue"), Err(KvError::Syntax { line: 1, .. })));
        assert!(matches!(KvDocument::parse("a=1\na=2"), Err(KvError::Duplicate { line: 2, .. })));
        assert!(matches!(KvDocument::parse("bad key = 1"), Err(KvError::Syntax { .. })));
        let doc = KvDocument::parse("x = abc").unwrap();
        assert!(matches!(doc.parse_value::<u32>("x"), Err(KvError::Value { .. })));
        assert_eq!(doc.reject_unknown(&["y"]), Err(KvError::UnknownKey("x".into())));
    }

    #[test]
    fn render_round_trips() {
        let doc = KvDocument::parse("b = 2\na = 1\n").unwrap();
        assert_eq!(KvDocument::parse(&doc.render()).unwrap(), doc);
    }
}
